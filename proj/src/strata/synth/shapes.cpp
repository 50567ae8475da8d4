#include "strata/synth/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "strata/core/rng.hpp"

namespace strata::synth {

namespace {
constexpr float kPi = 3.14159265358979323846f;

float clampf(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

// --- signed distance functions in shape-local coordinates (half-extent 1) ---

float sdf_circle(float x, float y) { return std::sqrt(x * x + y * y) - 1.f; }

float sdf_box(float x, float y) {
  float qx = std::fabs(x) - 1.f, qy = std::fabs(y) - 1.f;
  float ox = std::max(qx, 0.f), oy = std::max(qy, 0.f);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.f);
}

float sdf_ring(float x, float y) {
  float r = std::sqrt(x * x + y * y);
  return std::max(r - 1.f, 0.6f - r);
}

// Exact SDF of the equilateral triangle with circumradius 1, one vertex up.
float sdf_triangle(float x, float y) {
  float vx[3], vy[3];
  for (int k = 0; k < 3; ++k) {
    float a = kPi / 2.f + 2.f * kPi * float(k) / 3.f;
    vx[k] = std::cos(a);
    vy[k] = std::sin(a);
  }
  float d2 = 1e30f;
  float sign_acc = -1.f;  // negative inside
  bool inside = true;
  for (int k = 0; k < 3; ++k) {
    int k2 = (k + 1) % 3;
    float ex = vx[k2] - vx[k], ey = vy[k2] - vy[k];
    float px = x - vx[k], py = y - vy[k];
    float t = clampf((px * ex + py * ey) / (ex * ex + ey * ey), 0.f, 1.f);
    float dx = px - t * ex, dy = py - t * ey;
    d2 = std::min(d2, dx * dx + dy * dy);
    // Cross product sign: consistent orientation -> inside when all same side.
    if (ex * py - ey * px < 0.f) inside = false;
  }
  (void)sign_acc;
  float d = std::sqrt(d2);
  return inside ? -d : d;
}

float sdf(ShapeKind k, float x, float y) {
  switch (k) {
    case ShapeKind::Circle: return sdf_circle(x, y);
    case ShapeKind::Square: return sdf_box(x, y);
    case ShapeKind::Triangle: return sdf_triangle(x, y);
    case ShapeKind::Ring: return sdf_ring(x, y);
  }
  return 1e30f;
}

}  // namespace

const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Ring: return "ring";
  }
  return "?";
}

ShapeKind shape_from_string(const std::string& s) {
  if (s == "circle") return ShapeKind::Circle;
  if (s == "square") return ShapeKind::Square;
  if (s == "triangle") return ShapeKind::Triangle;
  if (s == "ring") return ShapeKind::Ring;
  throw std::invalid_argument("unknown shape kind: " + s);
}

float bound_radius(ShapeKind k) {
  return k == ShapeKind::Square ? std::sqrt(2.f) : 1.f;
}

void hsv_to_rgb(float h, float s, float v, float* rgb) {
  h = h - std::floor(h);
  float c = v * s;
  float hp = h * 6.f;
  float m = v - c;
  float xcomp = c * (1.f - std::fabs(std::fmod(hp, 2.f) - 1.f));
  float r = 0, g = 0, b = 0;
  int sector = std::min(5, int(hp));
  switch (sector) {
    case 0: r = c; g = xcomp; break;
    case 1: r = xcomp; g = c; break;
    case 2: g = c; b = xcomp; break;
    case 3: g = xcomp; b = c; break;
    case 4: r = xcomp; b = c; break;
    case 5: r = c; b = xcomp; break;
  }
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

void rgb_to_hsv(const float* rgb, float* hsv) {
  float r = rgb[0], g = rgb[1], b = rgb[2];
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  float d = mx - mn;
  float h = 0.f;
  if (d > 1e-8f) {
    if (mx == r)
      h = std::fmod((g - b) / d, 6.f);
    else if (mx == g)
      h = (b - r) / d + 2.f;
    else
      h = (r - g) / d + 4.f;
    h /= 6.f;
    if (h < 0) h += 1.f;
  }
  hsv[0] = h;
  hsv[1] = mx > 1e-8f ? d / mx : 0.f;
  hsv[2] = mx;
}

float hue_distance(float a, float b) {
  float d = std::fabs(a - b);
  d = d - std::floor(d);
  return std::min(d, 1.f - d);
}

float background_hue(int id) { return float(id) / float(kNumBackgrounds); }

Tensor<float> background(int id, int H, int W) {
  STRATA_CHECK(id >= 0 && id < kNumBackgrounds, "background id out of range");
  // Per-id pattern parameters come from a fixed stream so the background
  // library is a constant independent of any dataset seed.
  Rng r = Rng::stream(0x6267u, uint64_t(id));
  float f1x = 1.f + float(r.randint(3));
  float f1y = 1.f + float(r.randint(3));
  float f2x = 2.f + float(r.randint(3));
  float f2y = 1.f + float(r.randint(4));
  float ph1 = float(r.uniform()) * 2.f * kPi;
  float ph2 = float(r.uniform()) * 2.f * kPi;
  float ph3 = float(r.uniform()) * 2.f * kPi;
  float ph4 = float(r.uniform()) * 2.f * kPi;
  float sat = 0.35f + 0.15f * float(r.uniform());
  float hue = background_hue(id);

  Tensor<float> bg = Tensor<float>::uninit({H, W, 3});
  for (int i = 0; i < H; ++i) {
    float y = -1.f + 2.f * (float(i) + 0.5f) / float(H);
    for (int j = 0; j < W; ++j) {
      float x = -1.f + 2.f * (float(j) + 0.5f) / float(W);
      float v = 0.52f + 0.14f * std::sin(kPi * (f1x * x + f1y * y) + ph1) +
                0.10f * std::sin(kPi * (f2x * x - f2y * y) + ph2) +
                0.05f * std::sin(kPi * (3.7f * x + 1.3f * y) + ph3) *
                    std::sin(kPi * (1.9f * y - 2.6f * x) + ph4);
      v = clampf(v, 0.05f, 0.95f);
      hsv_to_rgb(hue, sat, v, &bg.data[size_t(i) * size_t(W) * 3 + size_t(j) * 3]);
    }
  }
  return bg;
}

Tensor<float> shape_alpha(const ShapeSpec& s, const SceneState& st, int H, int W) {
  Tensor<float> alpha({H, W});
  float px = 2.f / float(W);  // one pixel in scene units
  float br = bound_radius(s.kind) * st.scale + 2.f * px;
  float cr = std::cos(-st.rot), sr = std::sin(-st.rot);
  // Bounding box in pixel indices; outside it alpha stays 0.
  int j0 = std::max(0, int(std::floor((st.x - br + 1.f) * 0.5f * float(W))));
  int j1 = std::min(W - 1, int(std::ceil((st.x + br + 1.f) * 0.5f * float(W))));
  int i0 = std::max(0, int(std::floor((st.y - br + 1.f) * 0.5f * float(H))));
  int i1 = std::min(H - 1, int(std::ceil((st.y + br + 1.f) * 0.5f * float(H))));
  for (int i = i0; i <= i1; ++i) {
    float y = -1.f + 2.f * (float(i) + 0.5f) / float(H);
    for (int j = j0; j <= j1; ++j) {
      float x = -1.f + 2.f * (float(j) + 0.5f) / float(W);
      float dx = x - st.x, dy = y - st.y;
      float lx = (cr * dx - sr * dy) / st.scale;
      float ly = (sr * dx + cr * dy) / st.scale;
      float d = sdf(s.kind, lx, ly) * st.scale;  // scene-unit distance
      alpha.data[size_t(i) * size_t(W) + size_t(j)] = clampf(0.5f - d / px, 0.f, 1.f);
    }
  }
  return alpha;
}

Tensor<float> render_frame(const ShapeSpec& s, const SceneState& st, const Tensor<float>& bg) {
  int H = bg.shape[0], W = bg.shape[1];
  Tensor<float> alpha = shape_alpha(s, st, H, W);
  Tensor<float> out = Tensor<float>::uninit({H, W, 3});
  for (size_t p = 0; p < size_t(H) * size_t(W); ++p) {
    float a = alpha.data[p];
    for (int c = 0; c < 3; ++c)
      out.data[p * 3 + c] = bg.data[p * 3 + c] * (1.f - a) + s.color[size_t(c)] * a;
  }
  return out;
}

void validate(const ShapeSpec& s, int H, int W) {
  (void)H;
  (void)W;
  auto bad = [](const std::string& msg) { throw std::invalid_argument("ShapeSpec: " + msg); };
  for (float c : s.color)
    if (!(c >= 0.f && c <= 1.f)) bad("color outside [0,1]");
  if (!(s.init_scale >= 0.3f && s.init_scale <= 0.9f)) bad("init_scale outside [0.3, 0.9]");
  if (!(s.init_rot >= -kPi / 2 - 1e-6f && s.init_rot <= kPi / 2 + 1e-6f))
    bad("init_rot outside [-pi/2, pi/2]");
  if (s.background_id < 0 || s.background_id >= kNumBackgrounds) bad("background_id out of range");
  float br = bound_radius(s.kind) * s.init_scale;
  if (std::fabs(s.init_x) + br > kEdge || std::fabs(s.init_y) + br > kEdge)
    bad("shape not fully inside frame at t=0");
}

void validate(const MotionSpec& m, int T) {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("MotionSpec: " + msg); };
  if (T < 2) bad("sequence length must be >= 2");
  if (m.warmup_frames < 0 || m.warmup_frames >= T) bad("warmup_frames outside [0, T)");
  if (!(std::isfinite(m.dx) && std::isfinite(m.dy))) bad("non-finite translation");
  if (m.scale && !(m.total_scale >= 0.6f && m.total_scale <= 1.4f))
    bad("total_scale outside [0.6, 1.4]");
  if (m.rotate && !(m.total_rotation >= 0.f && m.total_rotation <= kPi / 4 + 1e-6f))
    bad("total_rotation outside [0, pi/4]");
}

std::pair<VideoClip, ActionTrace> render_sequence(const ShapeSpec& shape, const MotionSpec& motion,
                                                  int T, int H, int W) {
  validate(shape, H, W);
  validate(motion, T);

  int n_move = T - 1 - motion.warmup_frames;
  float slog = (motion.scale && n_move > 0) ? std::log(motion.total_scale) / float(n_move) : 0.f;
  float rstep = (motion.rotate && n_move > 0) ? motion.total_rotation / float(n_move) : 0.f;

  VideoClip clip;
  ActionTrace trace;
  trace.onset_frame = std::min(motion.warmup_frames, T - 1);
  clip.states.reserve(size_t(T));
  trace.steps.reserve(size_t(T - 1));

  SceneState st{shape.init_x, shape.init_y, shape.init_scale, shape.init_rot};
  clip.states.push_back(st);
  float br = bound_radius(shape.kind);
  for (int t = 0; t < T - 1; ++t) {
    ActionStep applied;  // zeros
    if (t >= motion.warmup_frames) {
      float s_new = clampf(st.scale * std::exp(slog), kScaleMin, kScaleMax);
      applied.scale_log = (motion.scale && s_new != st.scale) ? std::log(s_new / st.scale) : 0.f;
      if (motion.scale) st.scale = s_new;
      if (motion.rotate) {
        applied.rot = rstep;
        st.rot += rstep;
      }
      // Keep the shape fully inside the frame; the recorded translation is
      // the clamped one actually applied (possibly induced by scale growth).
      float m = std::max(kEdge - br * st.scale, 0.f);
      float want_dx = motion.translate ? motion.dx : 0.f;
      float want_dy = motion.translate ? motion.dy : 0.f;
      float nx = clampf(st.x + want_dx, -m, m);
      float ny = clampf(st.y + want_dy, -m, m);
      applied.dx = nx - st.x;
      applied.dy = ny - st.y;
      st.x = nx;
      st.y = ny;
    }
    trace.steps.push_back(applied);
    clip.states.push_back(st);
  }

  Tensor<float> bg = background(shape.background_id, H, W);
  clip.frames = Tensor<float>::uninit({T, H, W, 3});
  size_t frame_n = size_t(H) * size_t(W) * 3;
  for (int t = 0; t < T; ++t) {
    Tensor<float> f = render_frame(shape, clip.states[size_t(t)], bg);
    std::copy(f.data.begin(), f.data.end(), clip.frames.data.begin() + size_t(t) * frame_n);
  }
  return {std::move(clip), std::move(trace)};
}

}  // namespace strata::synth
