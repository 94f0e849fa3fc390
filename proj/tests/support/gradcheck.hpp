#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lcco/autodiff.hpp"

namespace lcco::test {

// Central finite-difference check. `build` must construct the graph from the
// given leaves and return a scalar; it is re-invoked for every probe so the
// leaves' current values are always used.
inline double max_rel_grad_error(const std::function<ad::Var()>& build,
                                 const std::vector<ad::Var>& leaves, double h = 1e-5) {
    for (auto& l : leaves) l->zero_grad();
    ad::Var out = build();
    ad::backward(out);

    std::vector<Tensor> analytic;
    for (auto& l : leaves)
        analytic.push_back(l->grad.empty() ? Tensor(l->value.shape()) : l->grad);

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        ad::Var l = leaves[li];
        for (long long i = 0; i < l->value.size(); ++i) {
            double orig = l->value[i];
            l->value[i] = orig + h;
            double fp;
            {
                ad::NoGradGuard ng;
                fp = build()->value[0];
            }
            l->value[i] = orig - h;
            double fm;
            {
                ad::NoGradGuard ng;
                fm = build()->value[0];
            }
            l->value[i] = orig;
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[li][i];
            double denom = std::max({1e-2, std::fabs(a), std::fabs(numeric)});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace lcco::test
