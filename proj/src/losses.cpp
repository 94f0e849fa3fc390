#include "lcco/losses.hpp"

#include <stdexcept>

#include "lcco/errors.hpp"

namespace lcco::losses {

using namespace ad;

Var soft_iou(const Var& pred, const Var& gt) {
    if (!pred->value.same_shape(gt->value))
        throw std::invalid_argument("soft_iou: resolution mismatch " + pred->value.shape_str() +
                                    " vs " + gt->value.shape_str());
    Var inter = sum_all(mul(pred, gt));
    Var uni = sub(add(sum_all(pred), sum_all(gt)), inter);
    Var ratio = div(add_scalar(inter, kIouEps), add_scalar(uni, kIouEps));
    return add_scalar(mul_scalar(ratio, -1.0), 1.0);
}

namespace {
Var mean_pairwise(const std::vector<Var>& a, const std::vector<Var>& b, const char* what) {
    if (a.empty() || a.size() != b.size())
        throw std::invalid_argument(std::string(what) + ": prediction/target count mismatch");
    Var total = soft_iou(a[0], b[0]);
    for (size_t i = 1; i < a.size(); ++i) total = add(total, soft_iou(a[i], b[i]));
    return mul_scalar(total, 1.0 / static_cast<double>(a.size()));
}
}  // namespace

Var iou_loss(const std::vector<Var>& pred, const std::vector<Var>& gt) {
    return mean_pairwise(pred, gt, "iou_loss");
}

Var coarse_loss(const std::vector<Var>& coarse_pred, const std::vector<Var>& gt_coarse) {
    return mean_pairwise(coarse_pred, gt_coarse, "coarse_loss");
}

Var classification_loss(const Var& upsilon, const Var& upsilon_gt) {
    if (!upsilon->value.same_shape(upsilon_gt->value))
        throw std::invalid_argument("classification_loss: length mismatch " +
                                    upsilon->value.shape_str() + " vs " +
                                    upsilon_gt->value.shape_str());
    Var p = clamp(upsilon, kBceEps, 1.0 - kBceEps);
    Var ones = constant(Tensor::full(p->value.shape(), 1.0));
    Var pos = mul(upsilon_gt, log_op(p));
    Var neg = mul(sub(ones, upsilon_gt), log_op(sub(ones, p)));
    return mul_scalar(mean_all(add(pos, neg)), -1.0);
}

Var total_loss(const LossParts& parts, const TrainConfig& cfg, LossReport* report) {
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0)
        throw ConfigError("total_loss: loss weights must be nonnegative");
    Var zero = constant(Tensor::scalar(0.0));
    Var iou = (cfg.losses.iou && parts.iou) ? parts.iou : zero;
    Var cs = (cfg.losses.cs && parts.cs) ? parts.cs : zero;
    Var c = (cfg.losses.c && parts.c) ? parts.c : zero;
    Var total = add(iou, add(mul_scalar(cs, cfg.lambda1), mul_scalar(c, cfg.lambda2)));
    if (report) {
        report->l_iou = iou->value[0];
        report->l_cs = cs->value[0];
        report->l_c = c->value[0];
        report->l_total = total->value[0];
        report->lambda1 = cfg.lambda1;
        report->lambda2 = cfg.lambda2;
    }
    return total;
}

}  // namespace lcco::losses
