#include "lcco/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace lcco::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {
thread_local int g_no_grad_depth = 0;

bool any_requires(const std::vector<Var>& parents) {
    for (const auto& p : parents)
        if (p && p->requires_grad) return true;
    return false;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_enabled() && any_requires(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(fn);
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
}

void check_rank(const Var& a, int r, const char* op) {
    if (a->value.rank() != r)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                    ", got " + a->value.shape_str());
}

// Unary elementwise helper: dfdx receives the input value x.
Var unary_ew(const Var& a, const char* /*op*/, double (*f)(double), double (*dfdx)(double)) {
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
    return make_node(std::move(out), {a}, [a, dfdx](Node& n) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * dfdx(a->value[i]);
    });
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
    return grad;
}

void Node::zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_map<Node*, Var> keep;  // pins nodes while we walk raw pointers
    stack.push_back({root.get(), 0});
    keep[root.get()] = root;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Var p = node->parents[idx++];
            Node* pn = p.get();
            if (pn->requires_grad && !seen.count(pn) && keep.find(pn) == keep.end()) {
                keep[pn] = p;
                stack.push_back({pn, 0});
            }
        } else {
            if (!seen.count(node)) {
                seen.insert(node);
                order.push_back(node);
            }
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (long long i = 0; i < gb.size(); ++i) gb[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (long long i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (long long i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * a->value[i];
        }
    });
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i] / b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] / b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (long long i = 0; i < gb.size(); ++i) {
                double bv = b->value[i];
                gb[i] -= n.grad[i] * a->value[i] / (bv * bv);
            }
        }
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i] + s;
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    });
}

Var mul_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
    return make_node(std::move(out), {a}, [a, s](Node& n) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * s;
    });
}

Var gelu(const Var& a) {
    return unary_ew(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x) {
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Var sigmoid(const Var& a) {
    return unary_ew(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double x) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 - s);
        });
}

Var relu(const Var& a) {
    return unary_ew(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var log_op(const Var& a) {
    return unary_ew(
        a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i)
        out[i] = std::min(hi, std::max(lo, a->value[i]));
    return make_node(std::move(out), {a}, [a, lo, hi](Node& n) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) {
            double x = a->value[i];
            if (x > lo && x < hi) ga[i] += n.grad[i];
        }
    });
}

Var rsqrt(const Var& a, double eps) {
    Tensor out(a->value.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = 1.0 / std::sqrt(a->value[i] + eps);
    return make_node(std::move(out), {a}, [a, eps](Node& n) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) {
            double t = a->value[i] + eps;
            ga[i] += n.grad[i] * (-0.5) / (t * std::sqrt(t));
        }
    });
}

// ---------------- shape ----------------

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = Tensor(shape);
    if (out.size() != a->value.size())
        throw std::invalid_argument("reshape: element count mismatch");
    for (long long i = 0; i < out.size(); ++i) out[i] = a->value[i];
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    });
}

// ---------------- matrices ----------------

Var matmul(const Var& a, const Var& b) {
    check_rank(a, 2, "matmul");
    check_rank(b, 2, "matmul");
    int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    if (b->value.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimension mismatch " + a->value.shape_str() +
                                    " x " + b->value.shape_str());
    Tensor out({m, n});
    {
        CMapMat A(a->value.data(), m, k), B(b->value.data(), k, n);
        MapMat C(out.data(), m, n);
        C.noalias() = A * B;
    }
    return make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& node) {
        CMapMat G(node.grad.data(), m, n);
        if (a->requires_grad) {
            MapMat GA(a->ensure_grad().data(), m, k);
            CMapMat B(b->value.data(), k, n);
            GA.noalias() += G * B.transpose();
        }
        if (b->requires_grad) {
            MapMat GB(b->ensure_grad().data(), k, n);
            CMapMat A(a->value.data(), m, k);
            GB.noalias() += A.transpose() * G;
        }
    });
}

Var transpose(const Var& a) {
    check_rank(a, 2, "transpose");
    int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at2(j, i) = a->value.at2(i, j);
    return make_node(std::move(out), {a}, [a, m, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga.at2(i, j) += node.grad.at2(j, i);
    });
}

Var add_rowwise(const Var& m, const Var& bias) {
    check_rank(m, 2, "add_rowwise");
    check_rank(bias, 1, "add_rowwise");
    int r = m->value.dim(0), c = m->value.dim(1);
    if (bias->value.dim(0) != c) throw std::invalid_argument("add_rowwise: bias width mismatch");
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at2(i, j) = m->value.at2(i, j) + bias->value[j];
    return make_node(std::move(out), {m, bias}, [m, bias, r, c](Node& node) {
        if (m->requires_grad) {
            Tensor& gm = m->ensure_grad();
            for (long long i = 0; i < gm.size(); ++i) gm[i] += node.grad[i];
        }
        if (bias->requires_grad) {
            Tensor& gb = bias->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gb[j] += node.grad.at2(i, j);
        }
    });
}

Var mean_axis0(const Var& m) {
    check_rank(m, 2, "mean_axis0");
    int r = m->value.dim(0), c = m->value.dim(1);
    Tensor out({c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[j] += m->value.at2(i, j);
    for (int j = 0; j < c; ++j) out[j] /= r;
    return make_node(std::move(out), {m}, [m, r, c](Node& node) {
        if (!m->requires_grad) return;
        Tensor& gm = m->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gm.at2(i, j) += node.grad[j] / r;
    });
}

Var mean_axis1(const Var& m) {
    check_rank(m, 2, "mean_axis1");
    int r = m->value.dim(0), c = m->value.dim(1);
    Tensor out({r});
    for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += m->value.at2(i, j);
        out[i] = s / c;
    }
    return make_node(std::move(out), {m}, [m, r, c](Node& node) {
        if (!m->requires_grad) return;
        Tensor& gm = m->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gm.at2(i, j) += node.grad[i] / c;
    });
}

Var max_axis0(const Var& m) {
    check_rank(m, 2, "max_axis0");
    int r = m->value.dim(0), c = m->value.dim(1);
    Tensor out({c});
    std::vector<int> arg(static_cast<size_t>(c), 0);
    for (int j = 0; j < c; ++j) {
        double best = m->value.at2(0, j);
        for (int i = 1; i < r; ++i)
            if (m->value.at2(i, j) > best) {
                best = m->value.at2(i, j);
                arg[static_cast<size_t>(j)] = i;
            }
        out[j] = best;
    }
    return make_node(std::move(out), {m}, [m, arg, c](Node& node) {
        if (!m->requires_grad) return;
        Tensor& gm = m->ensure_grad();
        for (int j = 0; j < c; ++j) gm.at2(arg[static_cast<size_t>(j)], j) += node.grad[j];
    });
}

Var concat_rows(const Var& a, const Var& b) {
    check_rank(a, 2, "concat_rows");
    check_rank(b, 2, "concat_rows");
    int ra = a->value.dim(0), rb = b->value.dim(0), c = a->value.dim(1);
    if (b->value.dim(1) != c) throw std::invalid_argument("concat_rows: column count mismatch");
    Tensor out({ra + rb, c});
    long long na = a->value.size(), nb = b->value.size();
    for (long long i = 0; i < na; ++i) out[i] = a->value[i];
    for (long long i = 0; i < nb; ++i) out[na + i] = b->value[i];
    return make_node(std::move(out), {a, b}, [a, b, na, nb](Node& node) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (long long i = 0; i < na; ++i) ga[i] += node.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (long long i = 0; i < nb; ++i) gb[i] += node.grad[na + i];
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    check_rank(a, 2, "concat_cols");
    check_rank(b, 2, "concat_cols");
    int r = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
    if (b->value.dim(0) != r) throw std::invalid_argument("concat_cols: row count mismatch");
    Tensor out({r, ca + cb});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) out.at2(i, j) = a->value.at2(i, j);
        for (int j = 0; j < cb; ++j) out.at2(i, ca + j) = b->value.at2(i, j);
    }
    return make_node(std::move(out), {a, b}, [a, b, r, ca, cb](Node& node) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < ca; ++j) ga.at2(i, j) += node.grad.at2(i, j);
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cb; ++j) gb.at2(i, j) += node.grad.at2(i, ca + j);
        }
    });
}

Var slice_cols(const Var& a, int c0, int c1) {
    check_rank(a, 2, "slice_cols");
    int r = a->value.dim(0), c = a->value.dim(1);
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    Tensor out({r, c1 - c0});
    for (int i = 0; i < r; ++i)
        for (int j = c0; j < c1; ++j) out.at2(i, j - c0) = a->value.at2(i, j);
    return make_node(std::move(out), {a}, [a, r, c0, c1](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = c0; j < c1; ++j) ga.at2(i, j) += node.grad.at2(i, j - c0);
    });
}

Var row(const Var& m, int i) {
    check_rank(m, 2, "row");
    int r = m->value.dim(0), c = m->value.dim(1);
    if (i < 0 || i >= r) throw std::invalid_argument("row: index out of range");
    Tensor out({1, c});
    for (int j = 0; j < c; ++j) out.at2(0, j) = m->value.at2(i, j);
    return make_node(std::move(out), {m}, [m, i, c](Node& node) {
        if (!m->requires_grad) return;
        Tensor& gm = m->ensure_grad();
        for (int j = 0; j < c; ++j) gm.at2(i, j) += node.grad.at2(0, j);
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty list");
    int c = -1;
    for (const auto& v : rows) {
        int width = (v->value.rank() == 1) ? v->value.dim(0)
                    : (v->value.rank() == 2 && v->value.dim(0) == 1)
                        ? v->value.dim(1)
                        : throw std::invalid_argument("stack_rows: parts must be [n] or [1,n]");
        if (c < 0) c = width;
        if (width != c) throw std::invalid_argument("stack_rows: width mismatch");
    }
    int r = static_cast<int>(rows.size());
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at2(i, j) = rows[static_cast<size_t>(i)]->value[j];
    std::vector<Var> parents(rows.begin(), rows.end());
    return make_node(std::move(out), std::move(parents), [rows, c](Node& node) {
        for (size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i]->requires_grad) continue;
            Tensor& g = rows[i]->ensure_grad();
            for (int j = 0; j < c; ++j) g[j] += node.grad.at2(static_cast<int>(i), j);
        }
    });
}

Var softmax_rows(const Var& m) {
    check_rank(m, 2, "softmax_rows");
    int r = m->value.dim(0), c = m->value.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
        double mx = m->value.at2(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, m->value.at2(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            double e = std::exp(m->value.at2(i, j) - mx);
            out.at2(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) out.at2(i, j) /= z;
    }
    Tensor sm = out;  // captured for the backward pass
    return make_node(std::move(out), {m}, [m, sm, r, c](Node& node) {
        if (!m->requires_grad) return;
        Tensor& gm = m->ensure_grad();
        for (int i = 0; i < r; ++i) {
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += node.grad.at2(i, j) * sm.at2(i, j);
            for (int j = 0; j < c; ++j)
                gm.at2(i, j) += sm.at2(i, j) * (node.grad.at2(i, j) - dot);
        }
    });
}

// ---------------- feature maps ----------------

namespace {
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, Tensor& col) {
    int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                int rIdx = (c * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        double v = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at3(c, iy, ix) : 0.0;
                        col.at2(rIdx, oy * ow + ox) = v;
                    }
                }
            }
}

void col2im_acc(const Tensor& col, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, Tensor& gx) {
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                int rIdx = (c * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        gx.at3(c, iy, ix) += col.at2(rIdx, oy * ow + ox);
                    }
                }
            }
}
}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
    check_rank(x, 3, "conv2d");
    if (w->value.rank() != 4) throw std::invalid_argument("conv2d: weight must be rank 4");
    int cin = x->value.dim(0), h = x->value.dim(1), ww = x->value.dim(2);
    int cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != cin)
        throw std::invalid_argument("conv2d: weight input channels mismatch");
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != cout))
        throw std::invalid_argument("conv2d: bias width mismatch");
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (ww + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

    int K = cin * kh * kw, L = oh * ow;
    Tensor col({K, L});
    im2col(x->value, kh, kw, stride, pad, oh, ow, col);
    Tensor out({cout, oh, ow});
    {
        CMapMat W(w->value.data(), cout, K), C(col.data(), K, L);
        MapMat O(out.data(), cout, L);
        O.noalias() = W * C;
    }
    if (bias)
        for (int c = 0; c < cout; ++c) {
            double b = bias->value[c];
            for (int i = 0; i < L; ++i) out[static_cast<long long>(c) * L + i] += b;
        }

    std::vector<Var> parents = bias ? std::vector<Var>{x, w, bias} : std::vector<Var>{x, w};
    return make_node(std::move(out), std::move(parents),
                     [x, w, bias, stride, pad, cin, h, ww, cout, kh, kw, oh, ow, K, L](Node& node) {
                         CMapMat G(node.grad.data(), cout, L);
                         if (w->requires_grad || x->requires_grad) {
                             if (w->requires_grad) {
                                 Tensor col({K, L});
                                 im2col(x->value, kh, kw, stride, pad, oh, ow, col);
                                 CMapMat C(col.data(), K, L);
                                 MapMat GW(w->ensure_grad().data(), cout, K);
                                 GW.noalias() += G * C.transpose();
                             }
                             if (x->requires_grad) {
                                 Tensor gcol({K, L});
                                 CMapMat W(w->value.data(), cout, K);
                                 MapMat GC(gcol.data(), K, L);
                                 GC.noalias() = W.transpose() * G;
                                 col2im_acc(gcol, cin, h, ww, kh, kw, stride, pad, oh, ow,
                                            x->ensure_grad());
                             }
                         }
                         if (bias && bias->requires_grad) {
                             Tensor& gb = bias->ensure_grad();
                             for (int c = 0; c < cout; ++c) {
                                 double s = 0.0;
                                 for (int i = 0; i < L; ++i)
                                     s += node.grad[static_cast<long long>(c) * L + i];
                                 gb[c] += s;
                             }
                         }
                     });
}

Var maxpool2d(const Var& x, int k, int stride, int pad) {
    check_rank(x, 3, "maxpool2d");
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    int oh = (h + 2 * pad - k) / stride + 1;
    int ow = (w + 2 * pad - k) / stride + 1;
    Tensor out({c, oh, ow});
    std::vector<long long> arg(static_cast<size_t>(c) * oh * ow, -1);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double best = -1e300;
                long long bi = -1;
                for (int ky = 0; ky < k; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        double v = x->value.at3(ch, iy, ix);
                        if (v > best) {
                            best = v;
                            bi = (static_cast<long long>(ch) * h + iy) * w + ix;
                        }
                    }
                }
                out.at3(ch, oy, ox) = (bi >= 0) ? best : 0.0;
                arg[(static_cast<size_t>(ch) * oh + oy) * ow + ox] = bi;
            }
    return make_node(std::move(out), {x}, [x, arg](Node& node) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (long long i = 0; i < node.grad.size(); ++i)
            if (arg[static_cast<size_t>(i)] >= 0) gx[arg[static_cast<size_t>(i)]] += node.grad[i];
    });
}

namespace {
struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> w1;  // weight of i1; i0 gets 1-w1
};

LerpAxis bilinear_axis(int in, int out) {
    LerpAxis ax;
    ax.i0.resize(static_cast<size_t>(out));
    ax.i1.resize(static_cast<size_t>(out));
    ax.w1.resize(static_cast<size_t>(out));
    double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        if (src > in - 1) src = in - 1;
        int lo = static_cast<int>(std::floor(src));
        int hi = std::min(lo + 1, in - 1);
        ax.i0[static_cast<size_t>(o)] = lo;
        ax.i1[static_cast<size_t>(o)] = hi;
        ax.w1[static_cast<size_t>(o)] = src - lo;
    }
    return ax;
}
}  // namespace

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
    check_rank(x, 3, "upsample_bilinear");
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    LerpAxis ay = bilinear_axis(h, out_h), axx = bilinear_axis(w, out_w);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < out_h; ++oy) {
            int y0 = ay.i0[static_cast<size_t>(oy)], y1 = ay.i1[static_cast<size_t>(oy)];
            double fy = ay.w1[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                int x0 = axx.i0[static_cast<size_t>(ox)], x1 = axx.i1[static_cast<size_t>(ox)];
                double fx = axx.w1[static_cast<size_t>(ox)];
                double v = (1 - fy) * ((1 - fx) * x->value.at3(ch, y0, x0) +
                                       fx * x->value.at3(ch, y0, x1)) +
                           fy * ((1 - fx) * x->value.at3(ch, y1, x0) +
                                 fx * x->value.at3(ch, y1, x1));
                out.at3(ch, oy, ox) = v;
            }
        }
    return make_node(std::move(out), {x}, [x, ay, axx, c, out_h, out_w](Node& node) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < out_h; ++oy) {
                int y0 = ay.i0[static_cast<size_t>(oy)], y1 = ay.i1[static_cast<size_t>(oy)];
                double fy = ay.w1[static_cast<size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    int x0 = axx.i0[static_cast<size_t>(ox)], x1 = axx.i1[static_cast<size_t>(ox)];
                    double fx = axx.w1[static_cast<size_t>(ox)];
                    double g = node.grad.at3(ch, oy, ox);
                    gx.at3(ch, y0, x0) += g * (1 - fy) * (1 - fx);
                    gx.at3(ch, y0, x1) += g * (1 - fy) * fx;
                    gx.at3(ch, y1, x0) += g * fy * (1 - fx);
                    gx.at3(ch, y1, x1) += g * fy * fx;
                }
            }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    check_rank(a, 3, "concat_channels");
    check_rank(b, 3, "concat_channels");
    int ca = a->value.dim(0), cb = b->value.dim(0);
    int h = a->value.dim(1), w = a->value.dim(2);
    if (b->value.dim(1) != h || b->value.dim(2) != w)
        throw std::invalid_argument("concat_channels: spatial mismatch");
    Tensor out({ca + cb, h, w});
    long long na = a->value.size(), nb = b->value.size();
    for (long long i = 0; i < na; ++i) out[i] = a->value[i];
    for (long long i = 0; i < nb; ++i) out[na + i] = b->value[i];
    return make_node(std::move(out), {a, b}, [a, b, na, nb](Node& node) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (long long i = 0; i < na; ++i) ga[i] += node.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (long long i = 0; i < nb; ++i) gb[i] += node.grad[na + i];
        }
    });
}

Var mul_channelwise(const Var& x, const Var& v) {
    check_rank(x, 3, "mul_channelwise");
    check_rank(v, 1, "mul_channelwise");
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (v->value.dim(0) != c)
        throw std::invalid_argument("mul_channelwise: channel count mismatch");
    Tensor out({c, h, w});
    long long hw = static_cast<long long>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        double s = v->value[ch];
        for (long long i = 0; i < hw; ++i) out[ch * hw + i] = x->value[ch * hw + i] * s;
    }
    return make_node(std::move(out), {x, v}, [x, v, c, hw](Node& node) {
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double s = v->value[ch];
                for (long long i = 0; i < hw; ++i) gx[ch * hw + i] += node.grad[ch * hw + i] * s;
            }
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (long long i = 0; i < hw; ++i)
                    s += node.grad[ch * hw + i] * x->value[ch * hw + i];
                gv[ch] += s;
            }
        }
    });
}

Var add_channelwise(const Var& x, const Var& v) {
    check_rank(x, 3, "add_channelwise");
    check_rank(v, 1, "add_channelwise");
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (v->value.dim(0) != c)
        throw std::invalid_argument("add_channelwise: channel count mismatch");
    Tensor out({c, h, w});
    long long hw = static_cast<long long>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        double s = v->value[ch];
        for (long long i = 0; i < hw; ++i) out[ch * hw + i] = x->value[ch * hw + i] + s;
    }
    return make_node(std::move(out), {x, v}, [x, v, c, hw](Node& node) {
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (long long i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (long long i = 0; i < hw; ++i) s += node.grad[ch * hw + i];
                gv[ch] += s;
            }
        }
    });
}

// ---------------- stacked sets ----------------

Var stack_axis0(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_axis0: empty list");
    for (const auto& p : parts)
        if (!p->value.same_shape(parts[0]->value))
            throw std::invalid_argument("stack_axis0: shape mismatch");
    int j = static_cast<int>(parts.size());
    std::vector<int> shape = {j};
    for (int d : parts[0]->value.shape()) shape.push_back(d);
    long long per = parts[0]->value.size();
    Tensor out(shape);
    for (int i = 0; i < j; ++i)
        for (long long t = 0; t < per; ++t)
            out[i * per + t] = parts[static_cast<size_t>(i)]->value[t];
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(std::move(out), std::move(parents), [parts, per](Node& node) {
        for (size_t i = 0; i < parts.size(); ++i) {
            if (!parts[i]->requires_grad) continue;
            Tensor& g = parts[i]->ensure_grad();
            for (long long t = 0; t < per; ++t)
                g[t] += node.grad[static_cast<long long>(i) * per + t];
        }
    });
}

Var softmax_axis0(const Var& s) {
    if (s->value.rank() < 2) throw std::invalid_argument("softmax_axis0: rank must be >= 2");
    int j = s->value.dim(0);
    long long per = s->value.size() / j;
    Tensor out(s->value.shape());
    for (long long t = 0; t < per; ++t) {
        double mx = s->value[t];
        for (int i = 1; i < j; ++i) mx = std::max(mx, s->value[i * per + t]);
        double z = 0.0;
        for (int i = 0; i < j; ++i) {
            double e = std::exp(s->value[i * per + t] - mx);
            out[i * per + t] = e;
            z += e;
        }
        for (int i = 0; i < j; ++i) out[i * per + t] /= z;
    }
    Tensor sm = out;
    return make_node(std::move(out), {s}, [s, sm, j, per](Node& node) {
        if (!s->requires_grad) return;
        Tensor& gs = s->ensure_grad();
        for (long long t = 0; t < per; ++t) {
            double dot = 0.0;
            for (int i = 0; i < j; ++i) dot += node.grad[i * per + t] * sm[i * per + t];
            for (int i = 0; i < j; ++i)
                gs[i * per + t] += sm[i * per + t] * (node.grad[i * per + t] - dot);
        }
    });
}

Var sum_axis0(const Var& s) {
    if (s->value.rank() < 2) throw std::invalid_argument("sum_axis0: rank must be >= 2");
    int j = s->value.dim(0);
    long long per = s->value.size() / j;
    std::vector<int> shape(s->value.shape().begin() + 1, s->value.shape().end());
    Tensor out(shape);
    for (int i = 0; i < j; ++i)
        for (long long t = 0; t < per; ++t) out[t] += s->value[i * per + t];
    return make_node(std::move(out), {s}, [s, j, per](Node& node) {
        if (!s->requires_grad) return;
        Tensor& gs = s->ensure_grad();
        for (int i = 0; i < j; ++i)
            for (long long t = 0; t < per; ++t) gs[i * per + t] += node.grad[t];
    });
}

// ---------------- reductions ----------------

Var sum_all(const Var& a) {
    Tensor out({1});
    out[0] = a->value.sum();
    return make_node(std::move(out), {a}, [a](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) ga[i] += node.grad[0];
    });
}

Var mean_all(const Var& a) {
    long long n = a->value.size();
    Tensor out({1});
    out[0] = a->value.sum() / n;
    return make_node(std::move(out), {a}, [a, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (long long i = 0; i < ga.size(); ++i) ga[i] += node.grad[0] / n;
    });
}

}  // namespace lcco::ad
