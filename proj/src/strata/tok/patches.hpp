#pragma once
// Frame <-> patch-grid reshaping. Patches are row-major over the grid; within
// a patch, pixels are row-major with interleaved RGB.
#include "strata/core/tensor.hpp"

namespace strata::tok {

// [T,H,W,3] -> [T, P, patch*patch*3] with P = (H/patch)*(W/patch).
inline Tensor<float> patchify(const Tensor<float>& frames, int patch) {
  STRATA_CHECK(frames.shape.size() == 4 && frames.shape[3] == 3, "patchify expects [T,H,W,3]");
  int64_t T = frames.shape[0], H = frames.shape[1], W = frames.shape[2];
  STRATA_CHECK(H % patch == 0 && W % patch == 0, "frame size not divisible by patch");
  int64_t gh = H / patch, gw = W / patch, P = gh * gw, D = int64_t(patch) * patch * 3;
  Tensor<float> out = Tensor<float>::uninit({T, P, D});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t gi = 0; gi < gh; ++gi)
      for (int64_t gj = 0; gj < gw; ++gj) {
        float* dst = &out.data[size_t(((t * P) + gi * gw + gj) * D)];
        for (int pi = 0; pi < patch; ++pi) {
          const float* src =
              &frames.data[size_t(((t * H + gi * patch + pi) * W + gj * patch) * 3)];
          std::copy_n(src, size_t(patch) * 3, dst + size_t(pi) * patch * 3);
        }
      }
  return out;
}

// Inverse of patchify: [T,P,patch*patch*3] -> [T,H,W,3].
inline Tensor<float> unpatchify(const Tensor<float>& tokens, int H, int W, int patch) {
  STRATA_CHECK(tokens.shape.size() == 3, "unpatchify expects [T,P,D]");
  int64_t T = tokens.shape[0], P = tokens.shape[1], D = tokens.shape[2];
  int64_t gh = H / patch, gw = W / patch;
  STRATA_CHECK(P == gh * gw && D == int64_t(patch) * patch * 3, "unpatchify shape mismatch");
  Tensor<float> out = Tensor<float>::uninit({T, H, W, 3});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t gi = 0; gi < gh; ++gi)
      for (int64_t gj = 0; gj < gw; ++gj) {
        const float* src = &tokens.data[size_t(((t * P) + gi * gw + gj) * D)];
        for (int pi = 0; pi < patch; ++pi) {
          float* dst = &out.data[size_t(((t * H + gi * patch + pi) * W + gj * patch) * 3)];
          std::copy_n(src + size_t(pi) * patch * 3, size_t(patch) * 3, dst);
        }
      }
  return out;
}

}  // namespace strata::tok
