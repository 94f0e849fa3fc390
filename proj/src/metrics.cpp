#include "lcco/metrics.hpp"

#include <stdexcept>

namespace lcco::metrics {

namespace {
void check(const Tensor& pred, const Tensor& gt, const char* what) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + pred.shape_str() +
                                    " vs " + gt.shape_str());
    if (pred.size() == 0) throw std::invalid_argument(std::string(what) + ": empty mask");
}
}  // namespace

double precision_pct(const Tensor& pred_binary, const Tensor& gt) {
    check(pred_binary, gt, "precision");
    long long correct = 0;
    for (long long i = 0; i < pred_binary.size(); ++i)
        if ((pred_binary[i] != 0.0) == (gt[i] != 0.0)) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred_binary.size());
}

double jaccard_pct(const Tensor& pred_binary, const Tensor& gt) {
    check(pred_binary, gt, "jaccard");
    long long inter = 0, uni = 0;
    for (long long i = 0; i < pred_binary.size(); ++i) {
        bool p = pred_binary[i] != 0.0, g = gt[i] != 0.0;
        if (p && g) ++inter;
        if (p || g) ++uni;
    }
    if (uni == 0) return 100.0;
    return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace lcco::metrics
