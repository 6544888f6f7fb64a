#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgen/rng.hpp"

namespace lgen {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl>();
        int64_t n = shape_numel(shape);
        impl->shape = std::move(shape);
        impl->data.assign(static_cast<size_t>(n), 0.0);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                        " does not match data length " +
                                        std::to_string(data.size()));
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& x : t.data()) x = stddev * rng.normal();
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    double& at(int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

    double value() const {
        if (numel() != 1)
            throw std::invalid_argument("Tensor::value: not a scalar, shape " +
                                        shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        if (rg) impl_->ensure_grad();
    }

    std::vector<double>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<double>& grad() const {
        const_cast<TensorImpl*>(impl_.get())->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() { std::fill(grad().begin(), grad().end(), 0.0); }

    Tensor detached() const {
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = impl_->shape;
        impl->data = impl_->data;
        impl->requires_grad = false;
        return Tensor(std::move(impl));
    }

    Tensor reshaped(Shape shape) const;  // shares the graph (defined after ops)

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend class Tape;
};

// Ordered record of operations from one forward pass; replayed in reverse by
// backward(). Confined to a single thread.
class Tape {
public:
    Tape() : prev_(active_) { active_ = this; }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    size_t size() const { return nodes_.size(); }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                        shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw std::invalid_argument("backward: loss does not require grad");
        const_cast<Tensor&>(loss).grad()[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
    Tape* prev_;
    static inline thread_local Tape* active_ = nullptr;
};

inline void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (!t) throw std::invalid_argument("backward: no active tape");
    t->backward(loss);
}

namespace detail {

inline void record_if_needed(Tensor& out, std::function<void()> fn) {
    if (out.requires_grad() && Tape::active()) {
        out.grad();  // allocate before closures run
        Tape::active()->record(std::move(fn));
    }
}

inline bool any_requires_grad(const Tensor& a) { return a.requires_grad(); }
inline bool any_requires_grad(const Tensor& a, const Tensor& b) {
    return a.requires_grad() || b.requires_grad();
}

// Broadcasting helpers (numpy rules: align trailing dims, each equal or 1).
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < ra ? a[ra - 1 - i] : 1;
        int64_t db = i < rb ? b[rb - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                        shape_str(a) + " and " + shape_str(b));
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

inline std::vector<int64_t> strides_for(const Shape& s) {
    std::vector<int64_t> st(s.size(), 0);
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Strides of `in` viewed in the broadcast output frame (0 where broadcast).
inline std::vector<int64_t> bc_strides(const Shape& in, const Shape& out) {
    auto st = strides_for(in);
    std::vector<int64_t> r(out.size(), 0);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        r[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : st[i];
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 DA dfa, DB dfb) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    Tensor out;
    if (sa == sb) {  // fast path
        out = Tensor::zeros(sa, any_requires_grad(a, b));
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.data();
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
        record_if_needed(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), dfa,
                               dfb]() {
            const auto& og = oi->grad;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (size_t i = 0; i < og.size(); ++i)
                    ai->grad[i] += dfa(ai->data[i], bi->data[i]) * og[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (size_t i = 0; i < og.size(); ++i)
                    bi->grad[i] += dfb(ai->data[i], bi->data[i]) * og[i];
            }
        });
        return out;
    }
    Shape so = broadcast_shape(sa, sb, name);
    out = Tensor::zeros(so, any_requires_grad(a, b));
    auto ost = strides_for(so);
    auto ast = bc_strides(sa, so);
    auto bst = bc_strides(sb, so);
    int64_t n = out.numel();
    size_t r = so.size();
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        ov[static_cast<size_t>(lin)] = fwd(av[static_cast<size_t>(ia)],
                                           bv[static_cast<size_t>(ib)]);
        // increment multi-index
        for (size_t d = r; d-- > 0;) {
            idx[d]++;
            ia += ast[d];
            ib += bst[d];
            if (idx[d] < so[d]) break;
            idx[d] = 0;
            ia -= ast[d] * so[d];
            ib -= bst[d] * so[d];
        }
    }
    record_if_needed(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), so, ast,
                           bst, dfa, dfb]() {
        size_t r = so.size();
        int64_t n = shape_numel(so);
        std::vector<int64_t> idx(r, 0);
        int64_t ia = 0, ib = 0;
        bool ga = ai->requires_grad, gb = bi->requires_grad;
        if (ga) ai->ensure_grad();
        if (gb) bi->ensure_grad();
        for (int64_t lin = 0; lin < n; ++lin) {
            double g = oi->grad[static_cast<size_t>(lin)];
            double va = ai->data[static_cast<size_t>(ia)];
            double vb = bi->data[static_cast<size_t>(ib)];
            if (ga) ai->grad[static_cast<size_t>(ia)] += dfa(va, vb) * g;
            if (gb) bi->grad[static_cast<size_t>(ib)] += dfb(va, vb) * g;
            for (size_t d = r; d-- > 0;) {
                idx[d]++;
                ia += ast[d];
                ib += bst[d];
                if (idx[d] < so[d]) break;
                idx[d] = 0;
                ia -= ast[d] * so[d];
                ib -= bst[d] * so[d];
            }
        }
    });
    return out;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd dydx) {
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
    record_if_needed(out, [ai = a.impl(), oi = out.impl(), dydx]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i)
            ai->grad[i] += dydx(ai->data[i], oi->data[i]) * oi->grad[i];
    });
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

// Subgradient goes to the winner; ties go to a.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "maximum", [](double x, double y) { return std::max(x, y); },
        [](double x, double y) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Tensor minimum(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "minimum", [](double x, double y) { return std::min(x, y); },
        [](double x, double y) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

inline Tensor scalar_mul(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor scalar_add(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

inline Tensor log_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

inline Tensor abs_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                    " as " + shape_str(shape));
    Tensor out = Tensor::from_data(std::move(shape), a.data(), a.requires_grad());
    detail::record_if_needed(out, [ai = a.impl(), oi = out.impl()]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
    return out;
}

inline Tensor Tensor::reshaped(Shape shape) const { return reshape(*this, std::move(shape)); }

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2)
        throw std::invalid_argument("transpose: expected rank 2, got " +
                                    shape_str(a.shape()));
    int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m}, a.requires_grad());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out.at(j * m + i) = a.at(i * n + j);
    detail::record_if_needed(out, [ai = a.impl(), oi = out.impl(), m, n]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                ai->grad[static_cast<size_t>(i * n + j)] +=
                    oi->grad[static_cast<size_t>(j * m + i)];
    });
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input list");
    int rank = parts[0].rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw std::invalid_argument("concat: axis out of range");
    Shape so = parts[0].shape();
    bool rg = false;
    int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank)
            throw std::invalid_argument("concat: rank mismatch " +
                                        shape_str(parts[0].shape()) + " vs " +
                                        shape_str(p.shape()));
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != so[static_cast<size_t>(d)])
                throw std::invalid_argument("concat: shape mismatch " +
                                            shape_str(parts[0].shape()) + " vs " +
                                            shape_str(p.shape()));
        total += p.dim(axis);
        rg = rg || p.requires_grad();
    }
    so[static_cast<size_t>(axis)] = total;
    Tensor out = Tensor::zeros(so, rg);

    // outer = product of dims before axis, inner = product after
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= so[static_cast<size_t>(d)];
    for (int d = axis + 1; d < rank; ++d) inner *= so[static_cast<size_t>(d)];
    int64_t out_axis_stride = total * inner;

    int64_t offset = 0;
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<int64_t> offsets;
    for (const Tensor& p : parts) {
        int64_t pa = p.dim(axis);
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * pa * inner, pa * inner,
                        out.data().begin() + o * out_axis_stride + offset * inner);
        impls.push_back(p.impl());
        offsets.push_back(offset);
        offset += pa;
    }
    detail::record_if_needed(out, [impls, offsets, oi = out.impl(), outer, inner,
                                   out_axis_stride, axis]() {
        for (size_t k = 0; k < impls.size(); ++k) {
            auto& pi = impls[k];
            if (!pi->requires_grad) continue;
            pi->ensure_grad();
            int64_t pa = pi->shape[static_cast<size_t>(axis)];
            for (int64_t o = 0; o < outer; ++o) {
                const double* src =
                    oi->grad.data() + o * out_axis_stride + offsets[k] * inner;
                double* dst = pi->grad.data() + o * pa * inner;
                for (int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
            }
        }
    });
    return out;
}

inline Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t len) {
    int rank = a.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw std::invalid_argument("narrow: axis out of range");
    if (start < 0 || len < 1 || start + len > a.dim(axis))
        throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of bounds for " +
                                    shape_str(a.shape()));
    Shape so = a.shape();
    so[static_cast<size_t>(axis)] = len;
    Tensor out = Tensor::zeros(so, a.requires_grad());
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
    int64_t in_stride = a.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(a.data().begin() + o * in_stride + start * inner, len * inner,
                    out.data().begin() + o * len * inner);
    detail::record_if_needed(out, [ai = a.impl(), oi = out.impl(), outer, inner,
                                   in_stride, start, len]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = oi->grad.data() + o * len * inner;
            double* dst = ai->grad.data() + o * in_stride + start * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

inline void axis_geometry(const Shape& s, int axis, int64_t& outer, int64_t& n,
                          int64_t& inner) {
    outer = 1;
    inner = 1;
    n = s[static_cast<size_t>(axis)];
    for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
}

}  // namespace detail

// axis >= 0 reduces that axis (removed from shape); axis == kAllAxes reduces all.
inline constexpr int kAllAxes = -1000;

inline Tensor sum(const Tensor& a, int axis = kAllAxes) {
    if (axis == kAllAxes) {
        Tensor out = Tensor::zeros({}, a.requires_grad());
        double s = 0.0;
        for (double v : a.data()) s += v;
        out.at(0) = s;
        detail::record_if_needed(out, [ai = a.impl(), oi = out.impl()]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            double g = oi->grad[0];
            for (double& x : ai->grad) x += g;
        });
        return out;
    }
    if (axis < 0) axis += a.rank();
    if (axis < 0 || axis >= a.rank())
        throw std::invalid_argument("sum: axis out of range for " +
                                    shape_str(a.shape()));
    int64_t outer, n, inner;
    detail::axis_geometry(a.shape(), axis, outer, n, inner);
    Shape so;
    for (int d = 0; d < a.rank(); ++d)
        if (d != axis) so.push_back(a.dim(d));
    Tensor out = Tensor::zeros(so, a.requires_grad());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k)
            for (int64_t i = 0; i < inner; ++i)
                out.at(o * inner + i) += a.at((o * n + k) * inner + i);
    detail::record_if_needed(out, [ai = a.impl(), oi = out.impl(), outer, n,
                                   inner]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < n; ++k)
                for (int64_t i = 0; i < inner; ++i)
                    ai->grad[static_cast<size_t>((o * n + k) * inner + i)] +=
                        oi->grad[static_cast<size_t>(o * inner + i)];
    });
    return out;
}

inline Tensor mean(const Tensor& a, int axis = kAllAxes) {
    int64_t n = axis == kAllAxes ? a.numel() : a.dim(axis < 0 ? axis + a.rank() : axis);
    return scalar_mul(sum(a, axis), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& a, int axis = -1) {
    int ax = axis < 0 ? axis + a.rank() : axis;
    if (ax < 0 || ax >= a.rank())
        throw std::invalid_argument("softmax: axis out of range for " +
                                    shape_str(a.shape()));
    int64_t outer, n, inner;
    detail::axis_geometry(a.shape(), ax, outer, n, inner);
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double mx = -1e300;
            for (int64_t k = 0; k < n; ++k)
                mx = std::max(mx, a.at((o * n + k) * inner + i));
            double z = 0.0;
            for (int64_t k = 0; k < n; ++k) {
                double e = std::exp(a.at((o * n + k) * inner + i) - mx);
                out.at((o * n + k) * inner + i) = e;
                z += e;
            }
            for (int64_t k = 0; k < n; ++k) out.at((o * n + k) * inner + i) /= z;
        }
    detail::record_if_needed(out, [ai = a.impl(), oi = out.impl(), outer, n,
                                   inner]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
                double dot = 0.0;
                for (int64_t k = 0; k < n; ++k) {
                    size_t idx = static_cast<size_t>((o * n + k) * inner + i);
                    dot += oi->grad[idx] * oi->data[idx];
                }
                for (int64_t k = 0; k < n; ++k) {
                    size_t idx = static_cast<size_t>((o * n + k) * inner + i);
                    ai->grad[idx] += oi->data[idx] * (oi->grad[idx] - dot);
                }
            }
    });
    return out;
}

// Normalizes over the last axis. gamma/beta broadcast against x.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    int last = x.rank() - 1;
    if (last < 0) throw std::invalid_argument("layer_norm: scalar input");
    int64_t n = x.dim(last);
    Tensor mu = mean(x, last);
    Shape keep = x.shape();
    keep[static_cast<size_t>(last)] = 1;
    mu = reshape(mu, keep);
    Tensor centered = sub(x, mu);
    Tensor var = reshape(mean(mul(centered, centered), last), keep);
    Tensor inv = div(Tensor::full({1}, 1.0), sqrt_t(scalar_add(var, eps)));
    Tensor normed = mul(centered, inv);
    (void)n;
    return add(mul(normed, gamma), beta);
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n}, detail::any_requires_grad(a, b));
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* O = out.data().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = B + p * n;
            double* orow = O + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    detail::record_if_needed(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m,
                                   k, n]() {
        const double* G = oi->grad.data();
        if (ai->requires_grad) {
            ai->ensure_grad();
            const double* B = bi->data.data();
            double* GA = ai->grad.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = G + i * n;
                    const double* brow = B + p * n;
                    for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    GA[i * k + p] += s;
                }
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            const double* A = ai->data.data();
            double* GB = bi->grad.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double av = A[i * k + p];
                    if (av == 0.0) continue;
                    const double* grow = G + i * n;
                    double* gbrow = GB + p * n;
                    for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup (gather rows; backward scatter-adds)
// ---------------------------------------------------------------------------

inline Tensor embedding_lookup(const Tensor& table,
                               const std::vector<int64_t>& indices) {
    if (table.rank() != 2)
        throw std::invalid_argument("embedding_lookup: table must be rank 2, got " +
                                    shape_str(table.shape()));
    int64_t v = table.dim(0), d = table.dim(1);
    for (int64_t idx : indices)
        if (idx < 0 || idx >= v)
            throw std::invalid_argument("embedding_lookup: index " +
                                        std::to_string(idx) + " out of range [0," +
                                        std::to_string(v) + ")");
    int64_t n = static_cast<int64_t>(indices.size());
    Tensor out = Tensor::zeros({n, d}, table.requires_grad());
    for (int64_t i = 0; i < n; ++i)
        std::copy_n(table.data().begin() + indices[static_cast<size_t>(i)] * d, d,
                    out.data().begin() + i * d);
    detail::record_if_needed(out, [ti = table.impl(), oi = out.impl(), indices,
                                   d]() {
        if (!ti->requires_grad) return;
        ti->ensure_grad();
        for (size_t i = 0; i < indices.size(); ++i)
            for (int64_t j = 0; j < d; ++j)
                ti->grad[static_cast<size_t>(indices[i] * d + j)] +=
                    oi->grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Conv / pooling / upsampling on [C,H,W] tensors
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int stride = 1, int padding = 0) {
    if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(1))
        throw std::invalid_argument("conv2d: incompatible shapes x=" +
                                    shape_str(x.shape()) + " w=" +
                                    shape_str(w.shape()));
    int64_t cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
    int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (bias.defined() && bias.numel() != cout)
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                    " does not match out channels " +
                                    std::to_string(cout));
    int64_t ho = (h + 2 * padding - kh) / stride + 1;
    int64_t wo = (ww + 2 * padding - kw) / stride + 1;
    if (ho < 1 || wo < 1)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    bool rg = detail::any_requires_grad(x, w) ||
              (bias.defined() && bias.requires_grad());
    Tensor out = Tensor::zeros({cout, ho, wo}, rg);
    const double* X = x.data().data();
    const double* W = w.data().data();
    double* O = out.data().data();
    for (int64_t oc = 0; oc < cout; ++oc) {
        double b = bias.defined() ? bias.at(oc) : 0.0;
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                double acc = b;
                for (int64_t ic = 0; ic < cin; ++ic)
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        int64_t iy = oy * stride + ky - padding;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = X + (ic * h + iy) * ww;
                        const double* wrow = W + ((oc * cin + ic) * kh + ky) * kw;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            int64_t ix = ox * stride + kx - padding;
                            if (ix < 0 || ix >= ww) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                O[(oc * ho + oy) * wo + ox] = acc;
            }
    }
    detail::record_if_needed(out, [xi = x.impl(), wi = w.impl(),
                                   bi = bias.defined() ? bias.impl() : nullptr,
                                   oi = out.impl(), cin, h, ww, cout, kh, kw, ho, wo,
                                   stride, padding]() {
        const double* G = oi->grad.data();
        if (bi && bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t oc = 0; oc < cout; ++oc) {
                double s = 0.0;
                for (int64_t i = 0; i < ho * wo; ++i) s += G[oc * ho * wo + i];
                bi->grad[static_cast<size_t>(oc)] += s;
            }
        }
        bool gx = xi->requires_grad, gw = wi->requires_grad;
        if (gx) xi->ensure_grad();
        if (gw) wi->ensure_grad();
        if (!gx && !gw) return;
        const double* X = xi->data.data();
        const double* W = wi->data.data();
        for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < wo; ++ox) {
                    double g = G[(oc * ho + oy) * wo + ox];
                    if (g == 0.0) continue;
                    for (int64_t ic = 0; ic < cin; ++ic)
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            int64_t iy = oy * stride + ky - padding;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                int64_t ix = ox * stride + kx - padding;
                                if (ix < 0 || ix >= ww) continue;
                                size_t xo = static_cast<size_t>((ic * h + iy) * ww + ix);
                                size_t wo2 = static_cast<size_t>(
                                    ((oc * cin + ic) * kh + ky) * kw + kx);
                                if (gx) xi->grad[xo] += W[wo2] * g;
                                if (gw) wi->grad[wo2] += X[xo] * g;
                            }
                        }
                }
    });
    return out;
}

inline Tensor max_pool2d(const Tensor& x, int k = 2) {
    if (x.rank() != 3)
        throw std::invalid_argument("max_pool2d: expected [C,H,W], got " +
                                    shape_str(x.shape()));
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % k != 0 || w % k != 0)
        throw std::invalid_argument("max_pool2d: dims " + shape_str(x.shape()) +
                                    " not divisible by " + std::to_string(k));
    int64_t ho = h / k, wo = w / k;
    Tensor out = Tensor::zeros({c, ho, wo}, x.requires_grad());
    auto argmax = std::make_shared<std::vector<int64_t>>(
        static_cast<size_t>(c * ho * wo));
    for (int64_t ic = 0; ic < c; ++ic)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                double best = -1e300;
                int64_t bi = 0;
                for (int64_t dy = 0; dy < k; ++dy)
                    for (int64_t dx = 0; dx < k; ++dx) {
                        int64_t idx = (ic * h + oy * k + dy) * w + ox * k + dx;
                        if (x.at(idx) > best) {
                            best = x.at(idx);
                            bi = idx;
                        }
                    }
                out.at((ic * ho + oy) * wo + ox) = best;
                (*argmax)[static_cast<size_t>((ic * ho + oy) * wo + ox)] = bi;
            }
    detail::record_if_needed(out, [xi = x.impl(), oi = out.impl(), argmax]() {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (size_t i = 0; i < argmax->size(); ++i)
            xi->grad[static_cast<size_t>((*argmax)[i])] += oi->grad[i];
    });
    return out;
}

inline Tensor upsample_nearest2d(const Tensor& x, int s = 2) {
    if (x.rank() != 3)
        throw std::invalid_argument("upsample_nearest2d: expected [C,H,W], got " +
                                    shape_str(x.shape()));
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out = Tensor::zeros({c, h * s, w * s}, x.requires_grad());
    for (int64_t ic = 0; ic < c; ++ic)
        for (int64_t y = 0; y < h * s; ++y)
            for (int64_t xx = 0; xx < w * s; ++xx)
                out.at((ic * h * s + y) * w * s + xx) =
                    x.at((ic * h + y / s) * w + xx / s);
    detail::record_if_needed(out, [xi = x.impl(), oi = out.impl(), c, h, w, s]() {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t y = 0; y < h * s; ++y)
                for (int64_t xx = 0; xx < w * s; ++xx)
                    xi->grad[static_cast<size_t>((ic * h + y / s) * w + xx / s)] +=
                        oi->grad[static_cast<size_t>((ic * h * s + y) * w * s + xx)];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Generic op dispatch
// ---------------------------------------------------------------------------

struct OpAttrs {
    int axis = -1;
    int stride = 1;
    int padding = 0;
    int scale = 2;
    int kernel = 2;
    double value = 0.0;
    std::vector<int64_t> indices;
};

inline Tensor forward_op(const std::string& op_kind, const std::vector<Tensor>& in,
                         const OpAttrs& attrs = {}) {
    auto need = [&](size_t n) {
        if (in.size() != n)
            throw std::invalid_argument("forward_op(" + op_kind + "): expected " +
                                        std::to_string(n) + " inputs, got " +
                                        std::to_string(in.size()));
    };
    if (op_kind == "matmul") { need(2); return matmul(in[0], in[1]); }
    if (op_kind == "add") { need(2); return add(in[0], in[1]); }
    if (op_kind == "sub") { need(2); return sub(in[0], in[1]); }
    if (op_kind == "mul") { need(2); return mul(in[0], in[1]); }
    if (op_kind == "concat") { return concat(in, attrs.axis); }
    if (op_kind == "mean") { need(1); return mean(in[0], attrs.axis); }
    if (op_kind == "sum") { need(1); return sum(in[0], attrs.axis); }
    if (op_kind == "relu") { need(1); return relu(in[0]); }
    if (op_kind == "silu") { need(1); return silu(in[0]); }
    if (op_kind == "sigmoid") { need(1); return sigmoid(in[0]); }
    if (op_kind == "tanh") { need(1); return tanh_t(in[0]); }
    if (op_kind == "softmax") { need(1); return softmax(in[0], attrs.axis); }
    if (op_kind == "layer_norm") { need(3); return layer_norm(in[0], in[1], in[2]); }
    if (op_kind == "conv2d") {
        if (in.size() == 2) return conv2d(in[0], in[1], Tensor(), attrs.stride, attrs.padding);
        need(3);
        return conv2d(in[0], in[1], in[2], attrs.stride, attrs.padding);
    }
    if (op_kind == "max_pool2d") { need(1); return max_pool2d(in[0], attrs.kernel); }
    if (op_kind == "upsample_nearest2d") { need(1); return upsample_nearest2d(in[0], attrs.scale); }
    if (op_kind == "embedding_lookup") { need(1); return embedding_lookup(in[0], attrs.indices); }
    if (op_kind == "scalar_mul") { need(1); return scalar_mul(in[0], attrs.value); }
    throw std::invalid_argument("forward_op: unknown op_kind '" + op_kind + "'");
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences
// ---------------------------------------------------------------------------

struct GradCheckResult {
    bool ok = true;
    double max_rel_error = 0.0;
    int64_t worst_index = -1;
};

// f must evaluate a scalar from `point` using taped ops; point is mutated in
// place for the finite differences and restored afterward.
inline GradCheckResult grad_check_detail(
    const std::function<Tensor(const Tensor&)>& f, Tensor point, double tolerance,
    double h = 1e-5) {
    if (tolerance <= 0) throw std::invalid_argument("grad_check: tolerance must be > 0");
    point.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Tape tape;
        point.zero_grad();
        Tensor loss = f(point);
        if (!std::isfinite(loss.value()))
            throw std::invalid_argument("grad_check: non-finite function value");
        tape.backward(loss);
        analytic = point.grad();
    }
    GradCheckResult res;
    for (int64_t i = 0; i < point.numel(); ++i) {
        double orig = point.at(i);
        point.at(i) = orig + h;
        double fp = f(point).value();
        point.at(i) = orig - h;
        double fm = f(point).value();
        point.at(i) = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::invalid_argument("grad_check: non-finite function value");
        double fd = (fp - fm) / (2 * h);
        double g = analytic[static_cast<size_t>(i)];
        double rel = std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), 1e-4});
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = i;
        }
    }
    res.ok = res.max_rel_error <= tolerance;
    return res;
}

inline bool grad_check(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& point, double tolerance) {
    return grad_check_detail(f, point.detached(), tolerance).ok;
}

}  // namespace lgen
