#include "strata/eval/imagestats.hpp"

#include <cmath>

#include "strata/synth/shapes.hpp"

namespace strata::eval {

namespace {
constexpr float kPi = 3.14159265358979323846f;
}

Tensor<float> change_mask(const Tensor<float>& frame, const Tensor<float>& bg, float thresh) {
  STRATA_CHECK(frame.shape == bg.shape && frame.shape.size() == 3,
               "change_mask expects matching [H,W,3] tensors");
  int H = frame.shape[0], W = frame.shape[1];
  Tensor<float> m({H, W});
  for (size_t p = 0; p < size_t(H) * size_t(W); ++p) {
    float d = 0.f;
    for (int c = 0; c < 3; ++c)
      d = std::max(d, std::fabs(frame.data[p * 3 + c] - bg.data[p * 3 + c]));
    m.data[p] = d > thresh ? 1.f : 0.f;
  }
  return m;
}

std::pair<float, float> mask_centroid(const Tensor<float>& mask) {
  STRATA_CHECK(mask.shape.size() == 2, "mask_centroid expects [H,W]");
  int H = mask.shape[0], W = mask.shape[1];
  double sx = 0, sy = 0, sw = 0;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double w = mask.data[size_t(i) * size_t(W) + size_t(j)];
      sx += w * (-1.0 + 2.0 * (j + 0.5) / W);
      sy += w * (-1.0 + 2.0 * (i + 0.5) / H);
      sw += w;
    }
  if (sw <= 0) return {0.f, 0.f};
  return {float(sx / sw), float(sy / sw)};
}

float mask_area(const Tensor<float>& mask) {
  STRATA_CHECK(mask.shape.size() == 2, "mask_area expects [H,W]");
  int H = mask.shape[0], W = mask.shape[1];
  double s = 0;
  for (float v : mask.data) s += v;
  return float(s * (2.0 / W) * (2.0 / H));
}

float mean_hue(const Tensor<float>& frame, const Tensor<float>& mask) {
  STRATA_CHECK(frame.shape.size() == 3 && frame.shape[0] == mask.shape[0] &&
                   frame.shape[1] == mask.shape[1],
               "mean_hue shape mismatch");
  int H = frame.shape[0], W = frame.shape[1];
  double cs = 0, sn = 0;
  for (size_t p = 0; p < size_t(H) * size_t(W); ++p) {
    float w = mask.data[p];
    if (w <= 0) continue;
    float hsv[3];
    strata::synth::rgb_to_hsv(&frame.data[p * 3], hsv);
    cs += w * std::cos(2.0 * kPi * hsv[0]);
    sn += w * std::sin(2.0 * kPi * hsv[0]);
  }
  float h = float(std::atan2(sn, cs) / (2.0 * kPi));
  return h < 0 ? h + 1.f : h;
}

float masked_variance(const Tensor<float>& frame, const Tensor<float>& mask) {
  int H = frame.shape[0], W = frame.shape[1];
  double var = 0;
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0, n = 0;
    for (size_t p = 0; p < size_t(H) * size_t(W); ++p) {
      float w = mask.data[p];
      if (w <= 0) continue;
      double v = frame.data[p * 3 + size_t(c)];
      s += w * v;
      s2 += w * v * v;
      n += w;
    }
    if (n > 0) var += s2 / n - (s / n) * (s / n);
  }
  return float(var / 3.0);
}

float iou(const Tensor<float>& a, const Tensor<float>& b, float thr) {
  STRATA_CHECK(a.shape == b.shape, "iou shape mismatch");
  double inter = 0, uni = 0;
  for (size_t p = 0; p < a.data.size(); ++p) {
    bool pa = a.data[p] >= thr, pb = b.data[p] >= thr;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  return uni > 0 ? float(inter / uni) : 1.f;
}

float mse(const Tensor<float>& a, const Tensor<float>& b) {
  STRATA_CHECK(a.shape == b.shape, "mse shape mismatch");
  double s = 0;
  for (size_t p = 0; p < a.data.size(); ++p) {
    double d = double(a.data[p]) - double(b.data[p]);
    s += d * d;
  }
  return a.data.empty() ? 0.f : float(s / double(a.data.size()));
}

float psnr(const Tensor<float>& a, const Tensor<float>& b) {
  float m = mse(a, b);
  if (m <= 0) return 99.f;
  return 10.f * std::log10(1.f / m);
}

float ssim(const Tensor<float>& a, const Tensor<float>& b) {
  STRATA_CHECK(a.shape == b.shape && a.shape.size() == 3 && a.shape[2] == 3,
               "ssim expects matching [H,W,3] tensors");
  int H = a.shape[0], W = a.shape[1];
  const int win = 8;
  STRATA_CHECK(H >= win && W >= win, "ssim frame smaller than the 8x8 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, n = double(win) * double(win);
  double total = 0;
  int64_t count = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i + win <= H; ++i)
      for (int j = 0; j + win <= W; ++j) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            size_t p = (size_t(i + y) * size_t(W) + size_t(j + x)) * 3 + size_t(c);
            double va = a.data[p], vb = b.data[p];
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        double ma = sa / n, mb = sb / n;
        double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return float(total / double(count));
}

}  // namespace strata::eval
