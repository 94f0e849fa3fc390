#pragma once

#include "lcco/tensor.hpp"

namespace lcco::imageops {

/// Bilinear resize of [C,H,W] (align_corners=false). Pure value op; the
/// differentiable upsampling lives in the autodiff layer.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

/// Nearest-neighbour resize of [H,W]; keeps binary masks binary.
Tensor resize_nearest(const Tensor& mask, int out_h, int out_w);

/// Area-average downsample of [H,W] by integer factors, then 0.5 threshold.
/// Used to build coarse-resolution mask targets.
Tensor downsample_mask(const Tensor& mask, int out_h, int out_w);

/// Binarize a soft [H,W] map at the given threshold (>= thresh -> 1).
Tensor binarize(const Tensor& soft, double thresh);

/// Zeroes background pixels of an RGB raster: out[c] = img[c] * mask.
Tensor apply_mask_rgb(const Tensor& img, const Tensor& mask);

/// Quantizes [0,1] doubles to the 8-bit bytes a PNG writer would emit.
/// Content hashing and serialization share this mapping.
std::vector<unsigned char> to_bytes(const Tensor& t);

}  // namespace lcco::imageops
