#pragma once

#include <random>
#include <string>
#include <vector>

#include "lcco/autodiff.hpp"

namespace lcco::nn {

using ad::Var;

/// Ordered collection of named trainable tensors. Registration order is the
/// checkpoint order, so construction must be deterministic.
class ParamRegistry {
public:
    Var add(const std::string& name, Tensor init);
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Var>& params() const { return params_; }
    Var find(const std::string& name) const;  // null if absent
    void zero_grads();
    long long total_size() const;

    /// Marks every parameter whose name starts with the prefix as frozen:
    /// excluded from trainable_params() and from gradient accumulation.
    void freeze_prefix(const std::string& prefix);
    std::vector<Var> trainable_params() const;

private:
    std::vector<std::string> names_;
    std::vector<Var> params_;
};

/// Deterministic weight init. Every draw comes from the caller's engine, so
/// a fixed seed fixes the whole model.
Tensor randn(std::mt19937_64& rng, std::vector<int> shape, double stddev);
Tensor kaiming(std::mt19937_64& rng, std::vector<int> shape, int fan_in);
Tensor unit_vector(std::mt19937_64& rng, int dim);

/// Linear layer y = xW + b, weights [in, out].
struct Linear {
    Var w, b;
    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& name, int in, int out, std::mt19937_64& rng,
           bool zero_init = false);
    Var operator()(const Var& x) const;  // x: [m, in]
    int out_features() const { return w->value.dim(1); }
};

/// 2-D convolution, weights [out, in, k, k].
struct Conv2d {
    Var w, b;
    int stride = 1, pad = 0;
    bool has_bias = true;
    Conv2d() = default;
    Conv2d(ParamRegistry& reg, const std::string& name, int in, int out, int k, int stride,
           int pad, std::mt19937_64& rng, bool bias = true, bool zero_init = false);
    Var operator()(const Var& x) const;
};

/// Instance normalization with affine parameters; statistics per channel
/// over spatial positions.
struct InstanceNorm {
    Var gamma, beta;
    double eps = 1e-5;
    InstanceNorm() = default;
    InstanceNorm(ParamRegistry& reg, const std::string& name, int channels);
    Var operator()(const Var& x) const;  // x: [C,H,W]
};

/// Two-layer perceptron in -> hidden -> out with GELU.
struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamRegistry& reg, const std::string& name, int in, int hidden, int out,
        std::mt19937_64& rng, bool zero_out = false);
    Var operator()(const Var& x) const;
};

/// Multi-head scaled dot-product attention over token matrices.
/// query [Tq, D], key/value [Tk, D]; heads must divide D.
struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamRegistry& reg, const std::string& name, int dim, int heads,
                       std::mt19937_64& rng);
    Var operator()(const Var& query, const Var& key, const Var& value) const;
};

/// Adam / SGD over a registry. Slot state is part of training determinism
/// but not of the inference checkpoint.
class Optimizer {
public:
    enum class Kind { adam, sgd };
    Optimizer(Kind kind, const std::vector<Var>& params, double lr, double momentum = 0.9,
              double beta2 = 0.999, double eps = 1e-8);
    void step();
    void zero_grads();
    double lr() const { return lr_; }

private:
    Kind kind_;
    std::vector<Var> params_;
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace lcco::nn
