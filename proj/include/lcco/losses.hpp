#pragma once

#include <vector>

#include "lcco/autodiff.hpp"
#include "lcco/config.hpp"

namespace lcco::losses {

inline constexpr double kIouEps = 1e-6;
inline constexpr double kBceEps = 1e-7;

/// Soft IoU penalty for one mask pair:
/// 1 - (sum(a*b)+eps) / (sum(a)+sum(b)-sum(a*b)+eps).
ad::Var soft_iou(const ad::Var& pred, const ad::Var& gt);

/// Mean soft IoU over the set; prediction and target resolutions must match.
ad::Var iou_loss(const std::vector<ad::Var>& pred, const std::vector<ad::Var>& gt);

/// Same averaging at the coarse resolution (targets are the downsampled,
/// re-thresholded ground-truth masks).
ad::Var coarse_loss(const std::vector<ad::Var>& coarse_pred, const std::vector<ad::Var>& gt_coarse);

/// Mean binary cross-entropy over the P classes, probabilities clamped to
/// [kBceEps, 1-kBceEps].
ad::Var classification_loss(const ad::Var& upsilon, const ad::Var& upsilon_gt);

/// Components and the weighted total of one step. Disabled terms are zero.
struct LossReport {
    double l_iou = 0.0, l_cs = 0.0, l_c = 0.0, l_total = 0.0;
    double lambda1 = 0.0, lambda2 = 0.0;
};

/// Parts may be null when the producing module is toggled off; a null or
/// toggled-off part contributes exactly zero.
struct LossParts {
    ad::Var iou, cs, c;
};

ad::Var total_loss(const LossParts& parts, const TrainConfig& cfg, LossReport* report);

}  // namespace lcco::losses
