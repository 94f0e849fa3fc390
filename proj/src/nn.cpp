#include "lcco/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace lcco::nn {

using namespace ad;

Var ParamRegistry::add(const std::string& name, Tensor init) {
    for (const auto& n : names_)
        if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
    Var v = leaf(std::move(init), true);
    names_.push_back(name);
    params_.push_back(v);
    return v;
}

Var ParamRegistry::find(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return params_[i];
    return nullptr;
}

void ParamRegistry::zero_grads() {
    for (auto& p : params_) p->zero_grad();
}

long long ParamRegistry::total_size() const {
    long long n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParamRegistry::freeze_prefix(const std::string& prefix) {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i].rfind(prefix, 0) == 0) params_[i]->requires_grad = false;
}

std::vector<Var> ParamRegistry::trainable_params() const {
    std::vector<Var> out;
    for (const auto& p : params_)
        if (p->requires_grad) out.push_back(p);
    return out;
}

Tensor randn(std::mt19937_64& rng, std::vector<int> shape, double stddev) {
    Tensor t(shape);
    std::normal_distribution<double> dist(0.0, stddev);
    for (long long i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

Tensor kaiming(std::mt19937_64& rng, std::vector<int> shape, int fan_in) {
    return randn(rng, std::move(shape), std::sqrt(2.0 / fan_in));
}

Tensor unit_vector(std::mt19937_64& rng, int dim) {
    Tensor v = randn(rng, {dim}, 1.0);
    double norm = 0.0;
    for (int i = 0; i < dim; ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        v.fill(0.0);
        v[0] = 1.0;
        return v;
    }
    for (int i = 0; i < dim; ++i) v[i] /= norm;
    return v;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in, int out,
               std::mt19937_64& rng, bool zero_init) {
    Tensor wt = zero_init ? Tensor({in, out}) : kaiming(rng, {in, out}, in);
    w = reg.add(name + ".w", std::move(wt));
    b = reg.add(name + ".b", Tensor({out}));
}

Var Linear::operator()(const Var& x) const { return add_rowwise(matmul(x, w), b); }

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int in, int out, int k, int stride_,
               int pad_, std::mt19937_64& rng, bool bias, bool zero_init)
    : stride(stride_), pad(pad_), has_bias(bias) {
    Tensor wt = zero_init ? Tensor({out, in, k, k}) : kaiming(rng, {out, in, k, k}, in * k * k);
    w = reg.add(name + ".w", std::move(wt));
    if (has_bias) b = reg.add(name + ".b", Tensor({out}));
}

Var Conv2d::operator()(const Var& x) const {
    return conv2d(x, w, has_bias ? b : Var{}, stride, pad);
}

InstanceNorm::InstanceNorm(ParamRegistry& reg, const std::string& name, int channels) {
    gamma = reg.add(name + ".gamma", Tensor::full({channels}, 1.0));
    beta = reg.add(name + ".beta", Tensor({channels}));
}

Var InstanceNorm::operator()(const Var& x) const {
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Var flat = reshape(x, {c, h * w});
    Var mu = mean_axis1(flat);                                  // [C]
    Var centered = add_channelwise(x, mul_scalar(mu, -1.0));    // x - mu
    Var var = mean_axis1(reshape(mul(centered, centered), {c, h * w}));
    Var inv = rsqrt(var, eps);
    Var normed = mul_channelwise(centered, inv);
    return add_channelwise(mul_channelwise(normed, gamma), beta);
}

Mlp::Mlp(ParamRegistry& reg, const std::string& name, int in, int hidden, int out,
         std::mt19937_64& rng, bool zero_out)
    : fc1(reg, name + ".fc1", in, hidden, rng),
      fc2(reg, name + ".fc2", hidden, out, rng, zero_out) {}

Var Mlp::operator()(const Var& x) const { return fc2(gelu(fc1(x))); }

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg, const std::string& name, int dim,
                                       int heads_, std::mt19937_64& rng)
    : heads(heads_) {
    if (dim % heads != 0)
        throw std::invalid_argument("attention: head count must divide embedding width");
    wq = Linear(reg, name + ".wq", dim, dim, rng);
    wk = Linear(reg, name + ".wk", dim, dim, rng);
    wv = Linear(reg, name + ".wv", dim, dim, rng);
    wo = Linear(reg, name + ".wo", dim, dim, rng);
}

Var MultiHeadAttention::operator()(const Var& query, const Var& key, const Var& value) const {
    int dim = wq.w->value.dim(0);
    if (query->value.dim(1) != dim || key->value.dim(1) != dim || value->value.dim(1) != dim)
        throw std::invalid_argument("attention: token width mismatch");
    if (key->value.dim(0) != value->value.dim(0))
        throw std::invalid_argument("attention: key/value token count mismatch");
    Var q = wq(query), k = wk(key), v = wv(value);
    int dh = dim / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var att = softmax_rows(mul_scalar(matmul(qh, transpose(kh)), scale));
        head_outs.push_back(matmul(att, vh));
    }
    Var cat = head_outs[0];
    for (size_t h = 1; h < head_outs.size(); ++h) cat = concat_cols(cat, head_outs[h]);
    return wo(cat);
}

Optimizer::Optimizer(Kind kind, const std::vector<Var>& params, double lr, double momentum,
                     double beta2, double eps)
    : kind_(kind), params_(params), lr_(lr), beta1_(momentum), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->value.shape());
        if (kind_ == Kind::adam) v_.emplace_back(p->value.shape());
    }
}

void Optimizer::step() {
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i) {
        Node& p = *params_[i];
        if (p.grad.empty()) continue;
        Tensor& g = p.grad;
        if (kind_ == Kind::sgd) {
            Tensor& m = m_[i];
            for (long long j = 0; j < g.size(); ++j) {
                m[j] = beta1_ * m[j] + g[j];
                p.value[j] -= lr_ * m[j];
            }
        } else {
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
            double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
            for (long long j = 0; j < g.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                double mh = m[j] / bc1, vh = v[j] / bc2;
                p.value[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }
}

void Optimizer::zero_grads() {
    for (auto& p : params_) p->zero_grad();
}

}  // namespace lcco::nn
