#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lcco/tensor.hpp"

namespace lcco::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of the reverse-mode tape. Built define-by-run; `backward(root)`
/// topologically sorts from the root and pushes gradients into parents.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    Tensor& ensure_grad();
    void zero_grad();
};

/// While a guard is alive, ops record no tape (pure forward). Nestable.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

Var constant(Tensor v);
Var leaf(Tensor v, bool requires_grad = true);

/// Backpropagate from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var gelu(const Var& a);     // exact erf form, smooth everywhere
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var log_op(const Var& a);
Var clamp(const Var& a, double lo, double hi);  // zero gradient outside [lo, hi]
Var rsqrt(const Var& a, double eps);            // 1/sqrt(a + eps)

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);

// ---- matrices ([m,n], row major) ----
Var matmul(const Var& a, const Var& b);           // [m,k]x[k,n] -> [m,n]
Var transpose(const Var& a);                      // [m,n] -> [n,m]
Var add_rowwise(const Var& m, const Var& bias);   // bias [n] added to each row
Var mean_axis0(const Var& m);                     // [m,n] -> [n]
Var mean_axis1(const Var& m);                     // [m,n] -> [m]
Var max_axis0(const Var& m);                      // [m,n] -> [n], grad to first max
Var concat_rows(const Var& a, const Var& b);      // [m1,n],[m2,n] -> [m1+m2,n]
Var concat_cols(const Var& a, const Var& b);      // [m,n1],[m,n2] -> [m,n1+n2]
Var slice_cols(const Var& a, int c0, int c1);     // columns [c0,c1)
Var row(const Var& m, int i);                     // -> [1,n]
Var stack_rows(const std::vector<Var>& rows);     // k vectors [n] or [1,n] -> [k,n]
Var softmax_rows(const Var& m);                   // softmax along each row

// ---- feature maps ([C,H,W]) ----
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
Var maxpool2d(const Var& x, int k, int stride, int pad);
Var upsample_bilinear(const Var& x, int out_h, int out_w);  // align_corners=false
Var concat_channels(const Var& a, const Var& b);
Var mul_channelwise(const Var& x, const Var& v);  // [C,H,W] * [C]
Var add_channelwise(const Var& x, const Var& v);

// ---- stacked sets ([J, ...]) ----
Var stack_axis0(const std::vector<Var>& parts);   // J tensors of equal shape
Var softmax_axis0(const Var& s);                  // softmax across axis 0 per trailing index
Var sum_axis0(const Var& s);                      // -> trailing shape

// ---- reductions ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]

}  // namespace lcco::ad
