#pragma once

#include "lcco/tensor.hpp"

namespace lcco::metrics {

/// Fraction of all pixels (foreground and background) labeled correctly,
/// in percent. Both masks must be binary and the same shape.
double precision_pct(const Tensor& pred_binary, const Tensor& gt);

/// Foreground intersection over union in percent. Both masks empty -> 100
/// (evaluation data guarantees nonempty ground truth; predictions may be
/// empty).
double jaccard_pct(const Tensor& pred_binary, const Tensor& gt);

}  // namespace lcco::metrics
