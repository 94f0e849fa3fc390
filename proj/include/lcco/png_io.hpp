#pragma once

#include <string>

#include "lcco/tensor.hpp"

namespace lcco::png {

/// Reads an 8-bit PNG as [3,H,W] doubles in [0,1] (k/255 exactly).
/// Palette, grayscale and 16-bit inputs are expanded/truncated to 8-bit RGB.
Tensor read_rgb(const std::string& path);

/// Reads an 8-bit grayscale PNG as [H,W]; values are raw bytes mapped k/255.
Tensor read_gray(const std::string& path);

/// Writes [3,H,W] in [0,1] as 8-bit RGB (rounded to nearest byte).
void write_rgb(const std::string& path, const Tensor& img);

/// Writes [H,W] in [0,1] as 8-bit grayscale.
void write_gray(const std::string& path, const Tensor& img);

}  // namespace lcco::png
