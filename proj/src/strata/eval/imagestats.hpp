#pragma once
// Pixel-space measurement helpers: foreground masks against a known
// background, mask centroid/area in scene units ([-1,1]^2), circular hue
// statistics, and IoU. Used by tests and by experiment evaluation on both
// rendered and decoded frames.
#include <utility>

#include "strata/core/tensor.hpp"

namespace strata::eval {

// Binary [H,W] mask: 1 where any channel differs from bg by more than thresh.
Tensor<float> change_mask(const Tensor<float>& frame, const Tensor<float>& bg,
                          float thresh = 0.1f);

// Weighted centroid in scene coordinates (x right, y down), weights = mask.
std::pair<float, float> mask_centroid(const Tensor<float>& mask);

// Mask area in scene units^2 (pixel area = (2/W)*(2/H)).
float mask_area(const Tensor<float>& mask);

// Circular mean hue of frame pixels weighted by mask, in [0,1).
float mean_hue(const Tensor<float>& frame, const Tensor<float>& mask);

// Mean per-channel variance of frame pixels inside the mask.
float masked_variance(const Tensor<float>& frame, const Tensor<float>& mask);

// Intersection-over-union of two soft masks binarized at thr.
float iou(const Tensor<float>& a, const Tensor<float>& b, float thr = 0.5f);

// Mean squared error and PSNR (peak 1.0) between same-shape tensors.
float mse(const Tensor<float>& a, const Tensor<float>& b);
float psnr(const Tensor<float>& a, const Tensor<float>& b);

// Structural similarity between two [H,W,3] frames in [0,1]: mean over all
// 8x8 windows (stride 1) and channels of the standard stabilized SSIM with
// C1 = 0.01^2, C2 = 0.03^2. Symmetric; ssim(x, x) == 1; range [-1, 1].
float ssim(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace strata::eval
