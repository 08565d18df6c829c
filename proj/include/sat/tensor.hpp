#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "sat/rng.hpp"

namespace sat {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

/// RAII guard that disables graph construction (evaluation mode).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename S>
struct TensorData {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad; // allocated lazily, same length as data
    bool requires_grad = false;
    const char* op = "";
    std::vector<std::shared_ptr<TensorData<S>>> parents;
    std::function<void(TensorData<S>&)> backward_fn;

    bool has_graph() const { return requires_grad || backward_fn != nullptr; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
};

/// Dense row-major tensor, rank <= 4, with reverse-mode autodiff.
/// Copies are shallow (shared storage); ops return new tensors that record
/// their inputs so backward() can run the chain rule once per node.
template <typename S>
class TensorT {
public:
    using Scalar = S;

    TensorT() = default;

    static TensorT zeros(Shape shape) { return filled(std::move(shape), S(0)); }
    static TensorT ones(Shape shape) { return filled(std::move(shape), S(1)); }

    static TensorT filled(Shape shape, S value) {
        check_rank(shape);
        TensorT t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = std::move(shape);
        t.d_->data.assign(shape_numel(t.d_->shape), value);
        return t;
    }

    static TensorT scalar(S value) {
        TensorT t = filled(Shape{}, value);
        return t;
    }

    static TensorT from_vector(Shape shape, std::vector<S> values) {
        check_rank(shape);
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        TensorT t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = std::move(shape);
        t.d_->data = std::move(values);
        return t;
    }

    static TensorT randn(Rng& rng, Shape shape, double stddev = 1.0) {
        TensorT t = zeros(std::move(shape));
        for (S& v : t.d_->data) v = static_cast<S>(rng.normal() * stddev);
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->data.size(); }
    std::size_t extent(std::size_t axis) const { return d_->shape.at(axis); }

    std::span<S> data() { return {d_->data.data(), d_->data.size()}; }
    std::span<const S> data() const { return {d_->data.data(), d_->data.size()}; }

    S item() const {
        if (size() != 1) throw std::invalid_argument("item(): tensor " + shape_str(shape()) + " is not a scalar");
        return d_->data[0];
    }

    S at(std::size_t i) const { return d_->data.at(i); }
    S& at(std::size_t i) { return d_->data.at(i); }
    S at(std::size_t r, std::size_t c) const { return d_->data.at(r * d_->shape.at(1) + c); }
    S& at(std::size_t r, std::size_t c) { return d_->data.at(r * d_->shape.at(1) + c); }

    TensorT& set_requires_grad(bool v = true) {
        d_->requires_grad = v;
        return *this;
    }
    bool requires_grad() const { return d_->requires_grad; }
    bool has_grad() const { return d_->grad.size() == d_->data.size(); }

    std::span<S> grad() {
        d_->ensure_grad();
        return {d_->grad.data(), d_->grad.size()};
    }
    std::span<const S> grad() const {
        if (!has_grad()) throw std::runtime_error("grad(): no gradient present");
        return {d_->grad.data(), d_->grad.size()};
    }
    void zero_grad() {
        d_->grad.clear();
    }

    /// Reverse-mode sweep from a scalar root. Visits each node exactly once,
    /// in reverse topological order.
    void backward() {
        if (size() != 1) throw std::invalid_argument("backward(): root must be scalar, got " + shape_str(shape()));
        std::vector<TensorData<S>*> order;
        std::unordered_set<TensorData<S>*> seen;
        topo_visit(d_.get(), seen, order);
        d_->ensure_grad();
        d_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorData<S>* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    std::shared_ptr<TensorData<S>> node() const { return d_; }

    TensorT detached() const {
        TensorT t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = d_->shape;
        t.d_->data = d_->data;
        return t;
    }

    template <typename T>
    TensorT<T> cast() const {
        TensorT<T> t = TensorT<T>::zeros(d_->shape);
        for (std::size_t i = 0; i < d_->data.size(); ++i) t.data()[i] = static_cast<T>(d_->data[i]);
        return t;
    }

    static TensorT make_result(Shape shape, std::vector<S> values, const char* op,
                               std::vector<std::shared_ptr<TensorData<S>>> parents,
                               std::function<void(TensorData<S>&)> backward_fn) {
        TensorT t = from_vector(std::move(shape), std::move(values));
        bool need = grad_enabled() &&
                    std::any_of(parents.begin(), parents.end(),
                                [](const auto& p) { return p && p->has_graph(); });
        if (need) {
            t.d_->op = op;
            t.d_->parents = std::move(parents);
            t.d_->backward_fn = std::move(backward_fn);
        }
        return t;
    }

private:
    static void check_rank(const Shape& s) {
        if (s.size() > 4) throw std::invalid_argument("tensor rank > 4 unsupported: " + shape_str(s));
    }

    static void topo_visit(TensorData<S>* n, std::unordered_set<TensorData<S>*>& seen,
                           std::vector<TensorData<S>*>& order) {
        // iterative DFS; graphs can reach tens of thousands of nodes
        struct Item {
            TensorData<S>* node;
            std::size_t next_child;
        };
        if (seen.count(n)) return;
        std::vector<Item> stack{{n, 0}};
        seen.insert(n);
        while (!stack.empty()) {
            Item& top = stack.back();
            if (top.next_child < top.node->parents.size()) {
                TensorData<S>* child = top.node->parents[top.next_child++].get();
                if (child && !seen.count(child)) {
                    seen.insert(child);
                    stack.push_back({child, 0});
                }
            } else {
                order.push_back(top.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorData<S>> d_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

template <typename S>
void accumulate(TensorData<S>& t, const std::vector<S>& delta) {
    t.ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) t.grad[i] += delta[i];
}

/// b broadcasts onto a when b's shape is a trailing suffix of a's shape.
inline bool trailing_match(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
    return true;
}

/// Splits shape into (outer, n, inner) around `axis`.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& n,
                       std::size_t& inner) {
    if (axis >= s.size()) throw std::invalid_argument("axis " + std::to_string(axis) +
                                                      " out of range for " + shape_str(s));
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops with trailing-suffix broadcasting for the second operand

template <typename S, typename FwdOp, typename BwdOp>
TensorT<S> binary_broadcast_op(const TensorT<S>& a, const TensorT<S>& b, const char* name,
                               FwdOp fwd, BwdOp bwd) {
    if (!detail::trailing_match(a.shape(), b.shape()))
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const std::size_t bn = b.size() == 0 ? 1 : b.size();
    std::vector<S> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i % bn]);
    auto an = a.node();
    auto bnode = b.node();
    return TensorT<S>::make_result(
        a.shape(), std::move(out), name, {an, bnode},
        [an, bnode, bn, bwd](TensorData<S>& self) {
            an->ensure_grad();
            bnode->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                S da, db;
                bwd(self.grad[i], an->data[i], bnode->data[i % bn], da, db);
                an->grad[i] += da;
                bnode->grad[i % bn] += db;
            }
        });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_broadcast_op(
        a, b, "add", [](S x, S y) { return x + y; },
        [](S g, S, S, S& da, S& db) {
            da = g;
            db = g;
        });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_broadcast_op(
        a, b, "sub", [](S x, S y) { return x - y; },
        [](S g, S, S, S& da, S& db) {
            da = g;
            db = -g;
        });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_broadcast_op(
        a, b, "mul", [](S x, S y) { return x * y; },
        [](S g, S x, S y, S& da, S& db) {
            da = g * y;
            db = g * x;
        });
}

template <typename S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) { return add(a, b); }
template <typename S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) { return sub(a, b); }
template <typename S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) { return mul(a, b); }

/// Multiply by a compile-time-known constant.
template <typename S>
TensorT<S> scale(const TensorT<S>& a, double c) {
    std::vector<S> out(a.size());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(ad[i] * c);
    auto an = a.node();
    return TensorT<S>::make_result(a.shape(), std::move(out), "scale", {an},
                                   [an, c](TensorData<S>& self) {
                                       an->ensure_grad();
                                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                                           an->grad[i] += static_cast<S>(self.grad[i] * c);
                                   });
}

/// Multiply a tensor by a scalar-valued tensor node (grad flows to both).
template <typename S>
TensorT<S> scale_by(const TensorT<S>& a, const TensorT<S>& s) {
    if (s.size() != 1)
        throw std::invalid_argument("scale_by: scalar operand has shape " + shape_str(s.shape()));
    const S sv = s.data()[0];
    std::vector<S> out(a.size());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * sv;
    auto an = a.node();
    auto sn = s.node();
    return TensorT<S>::make_result(a.shape(), std::move(out), "scale_by", {an, sn},
                                   [an, sn](TensorData<S>& self) {
                                       an->ensure_grad();
                                       sn->ensure_grad();
                                       const S sv2 = sn->data[0];
                                       S acc = S(0);
                                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                           an->grad[i] += self.grad[i] * sv2;
                                           acc += self.grad[i] * an->data[i];
                                       }
                                       sn->grad[0] += acc;
                                   });
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
    std::vector<S> out(a.size());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > S(0) ? ad[i] : S(0);
    auto an = a.node();
    return TensorT<S>::make_result(a.shape(), std::move(out), "relu", {an},
                                   [an](TensorData<S>& self) {
                                       an->ensure_grad();
                                       // subgradient at 0 is 0
                                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                                           if (an->data[i] > S(0)) an->grad[i] += self.grad[i];
                                   });
}

// ---------------------------------------------------------------------------
// matmul / transpose

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const Eigen::Index m = static_cast<Eigen::Index>(a.extent(0));
    const Eigen::Index k = static_cast<Eigen::Index>(a.extent(1));
    const Eigen::Index n = static_cast<Eigen::Index>(b.extent(1));
    std::vector<S> out(static_cast<std::size_t>(m * n));
    {
        detail::ECMap<S> A(a.data().data(), m, k);
        detail::ECMap<S> B(b.data().data(), k, n);
        detail::EMap<S> C(out.data(), m, n);
        C.noalias() = A * B;
    }
    auto an = a.node();
    auto bn = b.node();
    return TensorT<S>::make_result(
        Shape{static_cast<std::size_t>(m), static_cast<std::size_t>(n)}, std::move(out), "matmul",
        {an, bn}, [an, bn, m, k, n](TensorData<S>& self) {
            detail::ECMap<S> dC(self.grad.data(), m, n);
            detail::ECMap<S> A(an->data.data(), m, k);
            detail::ECMap<S> B(bn->data.data(), k, n);
            an->ensure_grad();
            bn->ensure_grad();
            detail::EMap<S> dA(an->grad.data(), m, k);
            detail::EMap<S> dB(bn->grad.data(), k, n);
            dA.noalias() += dC * B.transpose();
            dB.noalias() += A.transpose() * dC;
        });
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
    if (a.rank() != 2)
        throw std::invalid_argument("transpose: expected rank-2, got " + shape_str(a.shape()));
    const std::size_t m = a.extent(0), n = a.extent(1);
    std::vector<S> out(m * n);
    auto ad = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
    auto an = a.node();
    return TensorT<S>::make_result(Shape{n, m}, std::move(out), "transpose", {an},
                                   [an, m, n](TensorData<S>& self) {
                                       an->ensure_grad();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < n; ++j)
                                               an->grad[i * n + j] += self.grad[j * m + i];
                                   });
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                    " changes element count");
    std::vector<S> out(a.data().begin(), a.data().end());
    auto an = a.node();
    return TensorT<S>::make_result(std::move(shape), std::move(out), "reshape", {an},
                                   [an](TensorData<S>& self) {
                                       an->ensure_grad();
                                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                                           an->grad[i] += self.grad[i];
                                   });
}

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& ref = parts[0].shape();
    Shape out_shape = ref;
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(p.shape()));
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && p.shape()[i] != ref[i])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) +
                                            " vs " + shape_str(ref) + " on axis " + std::to_string(i));
        total_axis += p.shape().at(axis);
    }
    out_shape[axis] = total_axis;

    std::size_t outer, n_unused, inner;
    detail::axis_split(out_shape, axis, outer, n_unused, inner);
    std::vector<S> out(shape_numel(out_shape));
    std::vector<std::size_t> widths;
    widths.reserve(parts.size());
    for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);

    std::size_t col0 = 0;
    const std::size_t row_w = total_axis * inner;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        auto pd = parts[pi].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pd.data() + o * widths[pi], widths[pi], out.data() + o * row_w + col0);
        col0 += widths[pi];
    }

    std::vector<std::shared_ptr<TensorData<S>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    return TensorT<S>::make_result(
        out_shape, std::move(out), "concat", nodes,
        [nodes, widths, outer, row_w](TensorData<S>& self) {
            std::size_t c0 = 0;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                nodes[pi]->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < widths[pi]; ++i)
                        nodes[pi]->grad[o * widths[pi] + i] += self.grad[o * row_w + c0 + i];
                c0 += widths[pi];
            }
        });
}

/// Stack rank-1 vectors of equal length into a [n x d] matrix.
template <typename S>
TensorT<S> stack_rows(const std::vector<TensorT<S>>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
    const std::size_t d = rows[0].size();
    std::vector<S> out;
    out.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.size() != d)
            throw std::invalid_argument("stack_rows: expected [" + std::to_string(d) + "], got " +
                                        shape_str(r.shape()));
        out.insert(out.end(), r.data().begin(), r.data().end());
    }
    std::vector<std::shared_ptr<TensorData<S>>> nodes;
    nodes.reserve(rows.size());
    for (const auto& r : rows) nodes.push_back(r.node());
    return TensorT<S>::make_result(Shape{rows.size(), d}, std::move(out), "stack_rows", nodes,
                                   [nodes, d](TensorData<S>& self) {
                                       for (std::size_t r = 0; r < nodes.size(); ++r) {
                                           nodes[r]->ensure_grad();
                                           for (std::size_t i = 0; i < d; ++i)
                                               nodes[r]->grad[i] += self.grad[r * d + i];
                                       }
                                   });
}

template <typename S>
TensorT<S> slice_rows(const TensorT<S>& a, std::size_t r0, std::size_t r1) {
    if (a.rank() != 2 || r1 > a.extent(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                    std::to_string(r1) + ") for " + shape_str(a.shape()));
    const std::size_t n = a.extent(1), h = r1 - r0;
    std::vector<S> out(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * n),
                       a.data().begin() + static_cast<std::ptrdiff_t>(r1 * n));
    auto an = a.node();
    return TensorT<S>::make_result(Shape{h, n}, std::move(out), "slice_rows", {an},
                                   [an, r0, n, h](TensorData<S>& self) {
                                       an->ensure_grad();
                                       for (std::size_t i = 0; i < h * n; ++i)
                                           an->grad[r0 * n + i] += self.grad[i];
                                   });
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& a, std::size_t c0, std::size_t c1) {
    if (a.rank() != 2 || c1 > a.extent(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + shape_str(a.shape()));
    const std::size_t m = a.extent(0), n = a.extent(1), w = c1 - c0;
    std::vector<S> out(m * w);
    auto ad = a.data();
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(ad.data() + i * n + c0, w, out.data() + i * w);
    auto an = a.node();
    return TensorT<S>::make_result(Shape{m, w}, std::move(out), "slice_cols", {an},
                                   [an, m, n, w, c0](TensorData<S>& self) {
                                       an->ensure_grad();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < w; ++j)
                                               an->grad[i * n + c0 + j] += self.grad[i * w + j];
                                   });
}

/// Scalar view of one element (by flat index); gradient scatters back.
template <typename S>
TensorT<S> pick(const TensorT<S>& a, std::size_t flat_index) {
    if (flat_index >= a.size())
        throw std::invalid_argument("pick: index " + std::to_string(flat_index) + " out of range for " +
                                    shape_str(a.shape()));
    auto an = a.node();
    return TensorT<S>::make_result(Shape{}, {a.data()[flat_index]}, "pick", {an},
                                   [an, flat_index](TensorData<S>& self) {
                                       an->ensure_grad();
                                       an->grad[flat_index] += self.grad[0];
                                   });
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
    S acc = S(0);
    for (S v : a.data()) acc += v;
    auto an = a.node();
    return TensorT<S>::make_result(Shape{}, {acc}, "sum", {an}, [an](TensorData<S>& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
}

/// Mean over one axis; that axis is removed from the shape.
template <typename S>
TensorT<S> mean(const TensorT<S>& a, std::size_t axis) {
    std::size_t outer, n, inner;
    detail::axis_split(a.shape(), axis, outer, n, inner);
    Shape out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.shape()[i]);
    std::vector<S> out(outer * inner, S(0));
    auto ad = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < inner; ++i)
                out[o * inner + i] += ad[(o * n + j) * inner + i];
    const S inv = S(1) / static_cast<S>(n);
    for (S& v : out) v *= inv;
    auto an = a.node();
    return TensorT<S>::make_result(std::move(out_shape), std::move(out), "mean", {an},
                                   [an, outer, n, inner, inv](TensorData<S>& self) {
                                       an->ensure_grad();
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t j = 0; j < n; ++j)
                                               for (std::size_t i = 0; i < inner; ++i)
                                                   an->grad[(o * n + j) * inner + i] +=
                                                       self.grad[o * inner + i] * inv;
                                   });
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / cross_entropy

template <typename S>
TensorT<S> softmax(const TensorT<S>& a, std::size_t axis) {
    for (S v : a.data())
        if (std::isnan(static_cast<double>(v))) throw std::runtime_error("softmax: NaN input");
    std::size_t outer, n, inner;
    detail::axis_split(a.shape(), axis, outer, n, inner);
    std::vector<S> out(a.size());
    auto ad = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            S mx = ad[o * n * inner + i];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, ad[(o * n + j) * inner + i]);
            S denom = S(0);
            for (std::size_t j = 0; j < n; ++j) {
                S e = std::exp(ad[(o * n + j) * inner + i] - mx);
                out[(o * n + j) * inner + i] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[(o * n + j) * inner + i] /= denom;
        }
    auto an = a.node();
    return TensorT<S>::make_result(
        a.shape(), std::move(out), "softmax", {an},
        [an, outer, n, inner](TensorData<S>& self) {
            an->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    S dot = S(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        std::size_t idx = (o * n + j) * inner + i;
                        dot += self.grad[idx] * self.data[idx];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        std::size_t idx = (o * n + j) * inner + i;
                        an->grad[idx] += (self.grad[idx] - dot) * self.data[idx];
                    }
                }
        });
}

/// Layer normalization over the last axis with affine gain/bias.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                      double eps = 1e-5) {
    if (x.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d)
        throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                                    shape_str(gain.shape()) + " / " + shape_str(bias.shape()));
    const std::size_t rows = x.size() / d;
    std::vector<S> out(x.size());
    std::vector<S> xhat(x.size());
    std::vector<S> inv_std(rows);
    auto xd = x.data();
    auto gd = gain.data();
    auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = xd.data() + r * d;
        S mu = S(0);
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<S>(d);
        S var = S(0);
        for (std::size_t i = 0; i < d; ++i) {
            S c = row[i] - mu;
            var += c * c;
        }
        var /= static_cast<S>(d);
        S is = S(1) / std::sqrt(var + static_cast<S>(eps));
        inv_std[r] = is;
        for (std::size_t i = 0; i < d; ++i) {
            S xh = (row[i] - mu) * is;
            xhat[r * d + i] = xh;
            out[r * d + i] = xh * gd[i] + bd[i];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return TensorT<S>::make_result(
        x.shape(), std::move(out), "layer_norm", {xn, gn, bn},
        [xn, gn, bn, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorData<S>& self) {
            xn->ensure_grad();
            gn->ensure_grad();
            bn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* dy = self.grad.data() + r * d;
                const S* xh = xhat.data() + r * d;
                S mean_gdy = S(0), mean_gdy_xh = S(0);
                for (std::size_t i = 0; i < d; ++i) {
                    S gdy = dy[i] * gn->data[i];
                    mean_gdy += gdy;
                    mean_gdy_xh += gdy * xh[i];
                    gn->grad[i] += dy[i] * xh[i];
                    bn->grad[i] += dy[i];
                }
                mean_gdy /= static_cast<S>(d);
                mean_gdy_xh /= static_cast<S>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    S gdy = dy[i] * gn->data[i];
                    xn->grad[r * d + i] += (gdy - mean_gdy - xh[i] * mean_gdy_xh) * inv_std[r];
                }
            }
        });
}

/// Per-example negative log-softmax of the true class: [b x c] -> [b].
template <typename S>
TensorT<S> cross_entropy_each(const TensorT<S>& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [b x c], got " +
                                    shape_str(logits.shape()));
    const std::size_t b = logits.extent(0), c = logits.extent(1);
    if (labels.size() != b)
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch " + std::to_string(b));
    for (std::size_t l : labels)
        if (l >= c) throw std::out_of_range("cross_entropy: label " + std::to_string(l) +
                                            " out of range [0," + std::to_string(c) + ")");
    std::vector<S> out(b);
    std::vector<S> probs(b * c);
    auto ld = logits.data();
    for (std::size_t r = 0; r < b; ++r) {
        const S* row = ld.data() + r * c;
        S mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        S denom = S(0);
        for (std::size_t j = 0; j < c; ++j) {
            S e = std::exp(row[j] - mx);
            probs[r * c + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= denom;
        out[r] = std::log(denom) + mx - row[labels[r]];
    }
    auto ln = logits.node();
    return TensorT<S>::make_result(Shape{b}, std::move(out), "cross_entropy", {ln},
                                   [ln, labels, probs = std::move(probs), c](TensorData<S>& self) {
                                       ln->ensure_grad();
                                       const std::size_t b2 = self.grad.size();
                                       for (std::size_t r = 0; r < b2; ++r)
                                           for (std::size_t j = 0; j < c; ++j) {
                                               S p = probs[r * c + j];
                                               S ind = (j == labels[r]) ? S(1) : S(0);
                                               ln->grad[r * c + j] += self.grad[r] * (p - ind);
                                           }
                                   });
}

/// Mean cross-entropy over the batch (scalar).
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<std::size_t>& labels) {
    return mean(cross_entropy_each(logits, labels), 0);
}

// ---------------------------------------------------------------------------
// embedding lookup

/// Gather rows of a [V x d] table; gradients scatter-add into the rows.
template <typename S>
TensorT<S> embedding_lookup(const TensorT<S>& table, const std::vector<std::size_t>& indices) {
    if (table.rank() != 2)
        throw std::invalid_argument("embedding_lookup: table must be [V x d], got " +
                                    shape_str(table.shape()));
    const std::size_t v = table.extent(0), d = table.extent(1);
    for (std::size_t idx : indices)
        if (idx >= v) throw std::out_of_range("embedding_lookup: index " + std::to_string(idx) +
                                              " out of vocabulary " + std::to_string(v));
    std::vector<S> out(indices.size() * d);
    auto td = table.data();
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(td.data() + indices[r] * d, d, out.data() + r * d);
    auto tn = table.node();
    return TensorT<S>::make_result(Shape{indices.size(), d}, std::move(out), "embedding_lookup", {tn},
                                   [tn, indices, d](TensorData<S>& self) {
                                       tn->ensure_grad();
                                       for (std::size_t r = 0; r < indices.size(); ++r)
                                           for (std::size_t i = 0; i < d; ++i)
                                               tn->grad[indices[r] * d + i] += self.grad[r * d + i];
                                   });
}

/// Single row as a rank-1 vector.
template <typename S>
TensorT<S> embedding_row(const TensorT<S>& table, std::size_t index) {
    return reshape(embedding_lookup(table, std::vector<std::size_t>{index}), Shape{table.extent(1)});
}

/// x [m x k] * w [k x n] + b [n]
template <typename S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    return add(matmul(x, w), b);
}

} // namespace sat
