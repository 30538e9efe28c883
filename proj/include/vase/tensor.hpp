#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vase/rng.hpp"

namespace vase {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Arguments of log() below this are treated as the floor itself; keeps
// Bernoulli likelihoods finite on saturated outputs.
inline constexpr double kLogFloor = 1e-7;

// Thread-local switch for graph recording. Forward values are always
// computed; with grads disabled no edges are stored.
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense N-d tensor participating in a reverse-mode graph. A TensorT is a
// cheap shared handle; ops are free functions that record pull-style
// backward closures. Storage is a flat Eigen array in row-major order.
template <typename S>
class TensorT {
public:
    using Scalar = S;
    using Arr = ArrX<S>;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return from_array(std::move(shape), Arr(), requires_grad, /*zero_fill=*/true);
    }

    static TensorT full(Shape shape, S value) {
        TensorT t = zeros(std::move(shape));
        t.values().setConstant(value);
        return t;
    }

    static TensorT scalar(S value) { return full({1}, value); }

    static TensorT from_array(Shape shape, Arr data, bool requires_grad = false,
                              bool zero_fill = false) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        const Index n = shape_numel(t.node_->shape);
        check(n >= 0, "tensor shape must be non-negative");
        if (zero_fill) {
            t.node_->value = Arr::Zero(n);
        } else {
            check(data.size() == n, "tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(t.node_->shape));
            t.node_->value = std::move(data);
        }
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static TensorT randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (Index i = 0; i < t.size(); ++i)
            t.values()(i) = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Index size() const { return node_->value.size(); }
    Index dim(size_t i) const { return node_->shape.at(i); }
    size_t rank() const { return node_->shape.size(); }

    Arr& values() { return node_->value; }
    const Arr& values() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    Arr& grad() {
        ensure_grad();
        return node_->grad;
    }
    const Arr& grad() const { return node_->grad; }

    void zero_grad() {
        if (node_->grad.size() != node_->value.size()) node_->grad = Arr::Zero(size());
        node_->grad.setZero();
    }

    S item() const {
        check(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
        return node_->value(0);
    }

    // Row-major 2-D views over the flat storage.
    Eigen::Map<RowMat<S>> mat() {
        check(rank() == 2, "matrix view on tensor " + shape_str(shape()));
        return {node_->value.data(), dim(0), dim(1)};
    }
    Eigen::Map<const RowMat<S>> mat() const {
        check(rank() == 2, "matrix view on tensor " + shape_str(shape()));
        return {node_->value.data(), dim(0), dim(1)};
    }

    // Reverse-mode sweep from a scalar loss. Gradients accumulate
    // additively; leaves keep their grads until zeroed.
    void backward() const {
        check(size() == 1, "backward() requires a scalar loss, got " + shape_str(shape()));
        check(node_->requires_grad, "backward() on a tensor with no graph");
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        topo_sort(node_.get(), visited, order);
        node_->grad = Arr::Ones(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward) n->backward(n->grad);
        }
    }

    // Value copy detached from the graph.
    TensorT detach() const { return from_array(shape(), values()); }

    struct Node {
        Shape shape;
        Arr value;
        Arr grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(const Arr&)> backward;

        void ensure_grad() {
            if (grad.size() != value.size()) grad = Arr::Zero(value.size());
        }
    };

    std::shared_ptr<Node> node() const { return node_; }

    void ensure_grad() { node_->ensure_grad(); }

    static TensorT wrap(std::shared_ptr<Node> n) {
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static void topo_sort(Node* root, std::unordered_set<Node*>& visited,
                          std::vector<Node*>& order) {
        // Iterative post-order; recursion would overflow on long chains.
        struct Frame {
            Node* n;
            size_t next_parent;
        };
        std::vector<Frame> stack{{root, 0}};
        visited.insert(root);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.n->parents.size()) {
                Node* p = f.n->parents[f.next_parent++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    p->ensure_grad();
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
void check_finite(const TensorT<S>& t, const char* op) {
    if (!t.values().isFinite().all())
        throw std::invalid_argument(std::string(op) + ": non-finite input rejected");
}

template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// Builds the result node, wiring parents and the backward closure only
// when grads are live.
template <typename S, typename BackFn>
TensorT<S> make_op(Shape shape, ArrX<S> value, std::initializer_list<TensorT<S>> inputs,
                   BackFn&& back) {
    TensorT<S> out = TensorT<S>::from_array(std::move(shape), std::move(value));
    if (!GradMode::enabled()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs |= in.requires_grad();
    if (!needs) return out;
    auto node = out.node();
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::forward<BackFn>(back);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(
        a.shape(), (a.values() + b.values()).eval(), {a, b}, [an, bn](const ArrX<S>& g) {
            if (an->requires_grad) an->grad += g;
            if (bn->requires_grad) bn->grad += g;
        });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(
        a.shape(), (a.values() - b.values()).eval(), {a, b}, [an, bn](const ArrX<S>& g) {
            if (an->requires_grad) an->grad += g;
            if (bn->requires_grad) bn->grad -= g;
        });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(
        a.shape(), (a.values() * b.values()).eval(), {a, b}, [an, bn](const ArrX<S>& g) {
            if (an->requires_grad) an->grad += g * bn->value;
            if (bn->requires_grad) bn->grad += g * an->value;
        });
}

// k*a + c, element-wise with scalar constants.
template <typename S>
TensorT<S> affine_scalar(const TensorT<S>& a, S k, S c) {
    auto an = a.node();
    return detail::make_op<S>(a.shape(), (a.values() * k + c).eval(), {a},
                              [an, k](const ArrX<S>& g) {
                                  if (an->requires_grad) an->grad += g * k;
                              });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S k) {
    return affine_scalar(a, k, S(0));
}

template <typename S>
TensorT<S> neg(const TensorT<S>& a) {
    return scale(a, S(-1));
}

template <typename S>
TensorT<S> exp(const TensorT<S>& a) {
    detail::check_finite(a, "exp");
    auto an = a.node();
    ArrX<S> y = a.values().exp();
    auto yn = std::make_shared<ArrX<S>>(y);
    return detail::make_op<S>(a.shape(), std::move(y), {a}, [an, yn](const ArrX<S>& g) {
        if (an->requires_grad) an->grad += g * (*yn);
    });
}

// Natural log with a hard floor on the argument; gradient is zero in the
// floored region.
template <typename S>
TensorT<S> log(const TensorT<S>& a) {
    detail::check_finite(a, "log");
    auto an = a.node();
    const S floor = static_cast<S>(kLogFloor);
    ArrX<S> clamped = a.values().max(floor);
    return detail::make_op<S>(a.shape(), clamped.log().eval(), {a},
                              [an, floor](const ArrX<S>& g) {
                                  if (an->requires_grad)
                                      an->grad += (an->value > floor)
                                                      .select(g / an->value, ArrX<S>::Zero(g.size()));
                              });
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
    auto an = a.node();
    return detail::make_op<S>(a.shape(), a.values().max(S(0)).eval(), {a},
                              [an](const ArrX<S>& g) {
                                  if (an->requires_grad)
                                      an->grad += (an->value > S(0))
                                                      .select(g, ArrX<S>::Zero(g.size()));
                              });
}

template <typename S>
TensorT<S> tanh(const TensorT<S>& a) {
    detail::check_finite(a, "tanh");
    auto an = a.node();
    ArrX<S> y = a.values().tanh();
    auto yn = std::make_shared<ArrX<S>>(y);
    return detail::make_op<S>(a.shape(), std::move(y), {a}, [an, yn](const ArrX<S>& g) {
        if (an->requires_grad) an->grad += g * (S(1) - yn->square());
    });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
    detail::check_finite(a, "sigmoid");
    auto an = a.node();
    ArrX<S> y = (S(1) / (S(1) + (-a.values()).exp()));
    auto yn = std::make_shared<ArrX<S>>(y);
    return detail::make_op<S>(a.shape(), std::move(y), {a}, [an, yn](const ArrX<S>& g) {
        if (an->requires_grad) an->grad += g * (*yn) * (S(1) - *yn);
    });
}

template <typename S>
TensorT<S> square(const TensorT<S>& a) {
    auto an = a.node();
    return detail::make_op<S>(a.shape(), a.values().square().eval(), {a},
                              [an](const ArrX<S>& g) {
                                  if (an->requires_grad) an->grad += g * S(2) * an->value;
                              });
}

// Gradient passes on the closed interval [lo, hi] and is zero strictly
// outside it.
template <typename S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
    auto an = a.node();
    return detail::make_op<S>(a.shape(), a.values().max(lo).min(hi).eval(), {a},
                              [an, lo, hi](const ArrX<S>& g) {
                                  if (an->requires_grad)
                                      an->grad += (an->value >= lo && an->value <= hi)
                                                      .select(g, ArrX<S>::Zero(g.size()));
                              });
}

template <typename S>
TensorT<S> stop_grad(const TensorT<S>& a) {
    return a.detach();
}

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
    check(shape_numel(shape) == a.size(), "reshape: size mismatch " + shape_str(a.shape()) +
                                              " -> " + shape_str(shape));
    auto an = a.node();
    return detail::make_op<S>(std::move(shape), ArrX<S>(a.values()), {a},
                              [an](const ArrX<S>& g) {
                                  if (an->requires_grad) an->grad += g;
                              });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
    check(a.dim(1) == b.dim(0), "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    detail::check_finite(a, "matmul");
    detail::check_finite(b, "matmul");
    const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
    ArrX<S> out(m * n);
    Eigen::Map<RowMat<S>>(out.data(), m, n).noalias() =
        Eigen::Map<const RowMat<S>>(a.values().data(), m, k) *
        Eigen::Map<const RowMat<S>>(b.values().data(), k, n);
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>(
        {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const ArrX<S>& g) {
            Eigen::Map<const RowMat<S>> G(g.data(), m, n);
            if (an->requires_grad) {
                Eigen::Map<RowMat<S>> dA(an->grad.data(), m, k);
                Eigen::Map<const RowMat<S>> B(bn->value.data(), k, n);
                dA.noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                Eigen::Map<RowMat<S>> dB(bn->grad.data(), k, n);
                Eigen::Map<const RowMat<S>> A(an->value.data(), m, k);
                dB.noalias() += A.transpose() * G;
            }
        });
}

// Adds a length-n bias row to every row of an m x n matrix.
template <typename S>
TensorT<S> add_bias(const TensorT<S>& x, const TensorT<S>& b) {
    check(x.rank() == 2 && b.rank() == 1, "add_bias: expected matrix and vector");
    check(x.dim(1) == b.dim(0), "add_bias: width mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(b.shape()));
    const Index m = x.dim(0), n = x.dim(1);
    ArrX<S> out(m * n);
    Eigen::Map<RowMat<S>>(out.data(), m, n) =
        Eigen::Map<const RowMat<S>>(x.values().data(), m, n).rowwise() +
        Eigen::Map<const VecX<S>>(b.values().data(), n).transpose();
    auto xn = x.node(), bn = b.node();
    return detail::make_op<S>({m, n}, std::move(out), {x, b}, [xn, bn, m, n](const ArrX<S>& g) {
        if (xn->requires_grad) xn->grad += g;
        if (bn->requires_grad) {
            Eigen::Map<const RowMat<S>> G(g.data(), m, n);
            Eigen::Map<VecX<S>> db(bn->grad.data(), n);
            db.noalias() += G.colwise().sum().transpose();
        }
    });
}

// x * W + b for a batch of row vectors.
template <typename S>
TensorT<S> affine(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    return add_bias(matmul(x, w), b);
}

// Scales each row of x element-wise by the length-n vector v.
template <typename S>
TensorT<S> mul_rowwise(const TensorT<S>& x, const TensorT<S>& v) {
    check(x.rank() == 2 && v.rank() == 1 && x.dim(1) == v.dim(0),
          "mul_rowwise: incompatible shapes " + shape_str(x.shape()) + " and " +
              shape_str(v.shape()));
    const Index m = x.dim(0), n = x.dim(1);
    ArrX<S> out(m * n);
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), m, n) =
        Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            x.values().data(), m, n)
            .rowwise() *
        Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(v.values().data(), n);
    auto xn = x.node(), vn = v.node();
    return detail::make_op<S>({m, n}, std::move(out), {x, v}, [xn, vn, m, n](const ArrX<S>& g) {
        using RowArr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const RowArr> G(g.data(), m, n);
        if (xn->requires_grad) {
            Eigen::Map<RowArr> dX(xn->grad.data(), m, n);
            dX += G.rowwise() * Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(
                                    vn->value.data(), n);
        }
        if (vn->requires_grad) {
            Eigen::Map<const RowArr> X(xn->value.data(), m, n);
            Eigen::Map<Eigen::Array<S, 1, Eigen::Dynamic>> dv(vn->grad.data(), n);
            dv += (G * X).colwise().sum();
        }
    });
}

template <typename S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b) {
    check(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
    const Index m = a.dim(0), p = a.dim(1), q = b.dim(1);
    ArrX<S> out(m * (p + q));
    for (Index i = 0; i < m; ++i) {
        out.segment(i * (p + q), p) = a.values().segment(i * p, p);
        out.segment(i * (p + q) + p, q) = b.values().segment(i * q, q);
    }
    auto an = a.node(), bn = b.node();
    return detail::make_op<S>({m, p + q}, std::move(out), {a, b},
                              [an, bn, m, p, q](const ArrX<S>& g) {
                                  for (Index i = 0; i < m; ++i) {
                                      if (an->requires_grad)
                                          an->grad.segment(i * p, p) += g.segment(i * (p + q), p);
                                      if (bn->requires_grad)
                                          bn->grad.segment(i * q, q) +=
                                              g.segment(i * (p + q) + p, q);
                                  }
                              });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum_all(const TensorT<S>& a) {
    auto an = a.node();
    ArrX<S> out(1);
    out(0) = a.values().sum();
    return detail::make_op<S>({1}, std::move(out), {a}, [an](const ArrX<S>& g) {
        if (an->requires_grad) an->grad += g(0);
    });
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& a) {
    return scale(sum_all(a), S(1) / static_cast<S>(a.size()));
}

// Column means of an m x n matrix -> length-n vector.
template <typename S>
TensorT<S> colwise_mean(const TensorT<S>& x) {
    check(x.rank() == 2, "colwise_mean: expected matrix, got " + shape_str(x.shape()));
    const Index m = x.dim(0), n = x.dim(1);
    ArrX<S> out(n);
    Eigen::Map<VecX<S>>(out.data(), n) =
        Eigen::Map<const RowMat<S>>(x.values().data(), m, n).colwise().mean().transpose();
    auto xn = x.node();
    return detail::make_op<S>({n}, std::move(out), {x}, [xn, m, n](const ArrX<S>& g) {
        if (!xn->requires_grad) return;
        Eigen::Map<RowMat<S>> dX(xn->grad.data(), m, n);
        dX.rowwise() += (Eigen::Map<const VecX<S>>(g.data(), n) / static_cast<S>(m)).transpose();
    });
}

// ---------------------------------------------------------------------------
// Softmax / classification
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
    check(x.rank() == 2, "softmax_rows: expected matrix");
    detail::check_finite(x, "softmax_rows");
    const Index m = x.dim(0), n = x.dim(1);
    ArrX<S> out(m * n);
    for (Index i = 0; i < m; ++i) {
        auto row = x.values().segment(i * n, n);
        ArrX<S> e = (row - row.maxCoeff()).exp();
        out.segment(i * n, n) = e / e.sum();
    }
    auto xn = x.node();
    auto yn = std::make_shared<ArrX<S>>(out);
    return detail::make_op<S>({m, n}, std::move(out), {x}, [xn, yn, m, n](const ArrX<S>& g) {
        if (!xn->requires_grad) return;
        for (Index i = 0; i < m; ++i) {
            auto y = yn->segment(i * n, n);
            auto gr = g.segment(i * n, n);
            const S dot = (gr * y).sum();
            xn->grad.segment(i * n, n) += y * (gr - dot);
        }
    });
}

// Mean cross-entropy of integer labels under row-wise softmax of logits.
template <typename S>
TensorT<S> cross_entropy_with_logits(const TensorT<S>& logits, const std::vector<int>& labels) {
    check(logits.rank() == 2, "cross_entropy: expected matrix of logits");
    const Index m = logits.dim(0), n = logits.dim(1);
    check(static_cast<Index>(labels.size()) == m, "cross_entropy: label count mismatch");
    for (int y : labels)
        check(y >= 0 && y < n, "cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                   std::to_string(n) + ")");
    detail::check_finite(logits, "cross_entropy");
    auto probs = std::make_shared<ArrX<S>>(m * n);
    S total = S(0);
    for (Index i = 0; i < m; ++i) {
        auto row = logits.values().segment(i * n, n);
        const S mx = row.maxCoeff();
        ArrX<S> e = (row - mx).exp();
        const S z = e.sum();
        probs->segment(i * n, n) = e / z;
        total += std::log(z) + mx - row(labels[i]);
    }
    ArrX<S> out(1);
    out(0) = total / static_cast<S>(m);
    auto xn = logits.node();
    auto lbl = std::make_shared<std::vector<int>>(labels);
    return detail::make_op<S>({1}, std::move(out), {logits},
                              [xn, probs, lbl, m, n](const ArrX<S>& g) {
                                  if (!xn->requires_grad) return;
                                  const S w = g(0) / static_cast<S>(m);
                                  xn->grad += *probs * w;
                                  for (Index i = 0; i < m; ++i)
                                      xn->grad(i * n + (*lbl)[i]) -= w;
                              });
}

// ---------------------------------------------------------------------------
// Sampling helpers
// ---------------------------------------------------------------------------

// mu + exp(log_var / 2) * noise, element-wise.
template <typename S>
TensorT<S> reparameterize(const TensorT<S>& mu, const TensorT<S>& log_var,
                          const TensorT<S>& noise) {
    detail::check_same_shape(mu, log_var, "reparameterize");
    detail::check_same_shape(mu, noise, "reparameterize");
    return add(mu, mul(exp(scale(log_var, S(0.5))), noise));
}

// Per-dimension mixture of the reparameterized posterior (mask 1) and a
// unit-prior draw (mask 0). Gradient reaches mu/log_var only on unmasked
// dims; the same noise array serves both branches.
template <typename S>
TensorT<S> masked_posterior_sample(const TensorT<S>& mu, const TensorT<S>& log_var,
                                   const ArrX<S>& mask, const TensorT<S>& noise) {
    check(mu.rank() == 2, "masked_posterior_sample: expected batch matrix");
    check(mask.size() == mu.dim(1), "masked_posterior_sample: mask length " +
                                        std::to_string(mask.size()) + " != latent dim " +
                                        std::to_string(mu.dim(1)));
    const Index m = mu.dim(0), n = mu.dim(1);
    TensorT<S> mask_t = TensorT<S>::from_array({n}, mask);
    ArrX<S> prior_part(m * n);
    const ArrX<S> inv_mask = S(1) - mask;
    for (Index i = 0; i < m; ++i)
        prior_part.segment(i * n, n) = noise.values().segment(i * n, n) * inv_mask;
    TensorT<S> prior = TensorT<S>::from_array({m, n}, std::move(prior_part));
    return add(mul_rowwise(reparameterize(mu, log_var, noise), mask_t), prior);
}

template <typename S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) { return add(a, b); }
template <typename S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) { return sub(a, b); }
template <typename S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) { return mul(a, b); }

}  // namespace vase
