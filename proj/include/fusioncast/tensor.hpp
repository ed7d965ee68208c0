#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fusioncast/common.hpp"

namespace fusioncast {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

// Dense row-major tensor of rank <= 5. The payload is shared between copies
// and treated as immutable while a Tape is recording; mutation is reserved
// for construction and optimizer updates between passes.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_ = std::make_shared<std::vector<real>>(numel(shape_), real(0));
    }

    Tensor(Shape shape, std::vector<real> values) : shape_(std::move(shape)) {
        validate_shape(shape_);
        if (values.size() != numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_string(shape_));
        data_ = std::make_shared<std::vector<real>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, real value) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), value);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), real(1)); }

    static Tensor scalar(real value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    bool empty() const { return !data_; }

    const real* data() const { return data_->data(); }
    real* mutable_data() { return data_->data(); }
    const std::vector<real>& values() const { return *data_; }

    real operator[](std::size_t i) const { return (*data_)[i]; }

    // Row-major index helpers for the common ranks.
    real at(std::size_t i) const { return (*data_)[i]; }
    real at(std::size_t a, std::size_t b) const { return (*data_)[a * shape_[1] + b]; }
    real at(std::size_t c, std::size_t y, std::size_t x) const {
        return (*data_)[(c * shape_[1] + y) * shape_[2] + x];
    }
    real& at(std::size_t i) { return (*data_)[i]; }
    real& at(std::size_t a, std::size_t b) { return (*data_)[a * shape_[1] + b]; }
    real& at(std::size_t c, std::size_t y, std::size_t x) {
        return (*data_)[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool v) {
        requires_grad_ = v;
        return *this;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<real>>(*data_);
        t.requires_grad_ = requires_grad_;
        return t;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty() || shape.size() > 5)
            throw ShapeError("tensor rank must be in [1,5], got " + shape_string(shape));
        for (std::size_t d : shape)
            if (d < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_string(shape));
    }

    Shape shape_;
    std::shared_ptr<std::vector<real>> data_;
    bool requires_grad_ = false;
};

inline bool all_finite(const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Tape: ordered record of executed primitives for reverse-mode differentiation.
// One forward/backward pass owns one tape; backward walks nodes in exact
// reverse execution order and accumulates adjoints additively.
// ---------------------------------------------------------------------------

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<real>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active_slot() {
        thread_local Tape* active = nullptr;
        return active;
    }
    static Tape* active() { return active_slot(); }

    // Id of `t` for adjoint accumulation: existing node if `t` was produced
    // under this tape, a fresh leaf if it requires grad, -1 otherwise.
    int input_id(const Tensor& t) {
        auto it = index_.find(t.data());
        if (it != index_.end()) return it->second;
        if (!t.requires_grad()) return -1;
        return add_node(t, nullptr);
    }

    void record(const Tensor& out, BackwardFn back) { add_node(out, std::move(back)); }

    std::vector<real>& adjoint(int id) { return nodes_[static_cast<std::size_t>(id)].adj; }

    // Seeds d(root)/d(root) = 1 and replays the tape backwards. `root` must be
    // a scalar produced under this tape. Single use per tape.
    void backward(const Tensor& root) {
        if (root.size() != 1) throw ShapeError("backward root must be scalar, got " + shape_string(root.shape()));
        auto it = index_.find(root.data());
        if (it == index_.end()) throw DataError("backward root was not recorded on this tape");
        nodes_[static_cast<std::size_t>(it->second)].adj[0] = real(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].adj);
        }
    }

    bool tracked(const Tensor& t) const { return index_.count(t.data()) != 0; }

    // Accumulated adjoint of `t`, or zeros when `t` never joined this tape.
    Tensor grad(const Tensor& t) const {
        auto it = index_.find(t.data());
        if (it == index_.end()) return Tensor::zeros(t.shape());
        return Tensor(t.shape(), nodes_[static_cast<std::size_t>(it->second)].adj);
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;  // keeps the payload alive so data pointers stay unique
        std::vector<real> adj;
        BackwardFn back;
    };

    int add_node(const Tensor& value, BackwardFn back) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{value, std::vector<real>(value.size(), real(0)), std::move(back)});
        index_.emplace(value.data(), id);
        return id;
    }

    std::vector<Node> nodes_;
    std::unordered_map<const real*, int> index_;
};

// Scopes a tape as the thread's active recorder.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) : prev_(Tape::active_slot()) { Tape::active_slot() = &tape; }
    ~TapeScope() { Tape::active_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

namespace detail {

inline Tape* recording_tape(bool any_requires_grad) {
    Tape* t = Tape::active();
    return (t && any_requires_grad) ? t : nullptr;
}

inline void axpy(std::vector<real>& dst, const std::vector<real>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

// True when `b` matches a trailing suffix of `a`'s extents (and is smaller).
inline bool suffix_broadcastable(const Shape& a, const Shape& b) {
    if (b.size() >= a.size()) return false;
    const std::size_t off = a.size() - b.size();
    for (std::size_t i = 0; i < b.size(); ++i)
        if (a[off + i] != b[i]) return false;
    return true;
}

inline Tensor ew_add(const Tensor& a, const Tensor& b) {
    const bool equal = a.same_shape(b);
    if (!equal && !suffix_broadcastable(a.shape(), b.shape()))
        throw ShapeError("ew_add shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));

    Tensor out(a.shape());
    const std::size_t n = a.size(), m = b.size();
    real* o = out.mutable_data();
    const real* pa = a.data();
    const real* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i % m];
    out.set_requires_grad(a.requires_grad() || b.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ia = tp->input_id(a), ib = tp->input_id(b);
        tp->record(out, [ia, ib, n, m](Tape& t, const std::vector<real>& g) {
            if (ia >= 0) detail::axpy(t.adjoint(ia), g);
            if (ib >= 0) {
                auto& gb = t.adjoint(ib);
                for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i];
            }
        });
    }
    return out;
}

inline Tensor ew_sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("ew_sub shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Tensor out(a.shape());
    real* o = out.mutable_data();
    const real* pa = a.data();
    const real* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = pa[i] - pb[i];
    out.set_requires_grad(a.requires_grad() || b.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ia = tp->input_id(a), ib = tp->input_id(b);
        tp->record(out, [ia, ib](Tape& t, const std::vector<real>& g) {
            if (ia >= 0) detail::axpy(t.adjoint(ia), g);
            if (ib >= 0) {
                auto& gb = t.adjoint(ib);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

// Hadamard product. Broadcast forms accepted for `b`:
//   - same shape as `a`
//   - per-channel vector (C) against feature map a=(C,H,W)
//   - single-channel map (1,H,W) against feature map a=(C,H,W)
inline Tensor ew_mul(const Tensor& a, const Tensor& b) {
    enum class Mode { Equal, ChannelVec, OneChannelMap };
    Mode mode;
    if (a.same_shape(b)) {
        mode = Mode::Equal;
    } else if (a.rank() == 3 && b.rank() == 1 && b.extent(0) == a.extent(0)) {
        mode = Mode::ChannelVec;
    } else if (a.rank() == 3 && b.rank() == 3 && b.extent(0) == 1 && b.extent(1) == a.extent(1) &&
               b.extent(2) == a.extent(2)) {
        mode = Mode::OneChannelMap;
    } else {
        throw ShapeError("ew_mul shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }

    Tensor out(a.shape());
    real* o = out.mutable_data();
    const real* pa = a.data();
    const real* pb = b.data();
    const std::size_t n = a.size();
    const std::size_t hw = (mode == Mode::Equal) ? 0 : a.extent(1) * a.extent(2);

    switch (mode) {
        case Mode::Equal:
            for (std::size_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
            break;
        case Mode::ChannelVec:
            for (std::size_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i / hw];
            break;
        case Mode::OneChannelMap:
            for (std::size_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i % hw];
            break;
    }
    out.set_requires_grad(a.requires_grad() || b.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ia = tp->input_id(a), ib = tp->input_id(b);
        tp->record(out, [ia, ib, a, b, mode, n, hw](Tape& t, const std::vector<real>& g) {
            const real* pa = a.data();
            const real* pb = b.data();
            if (ia >= 0) {
                auto& ga = t.adjoint(ia);
                switch (mode) {
                    case Mode::Equal:
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
                        break;
                    case Mode::ChannelVec:
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i / hw];
                        break;
                    case Mode::OneChannelMap:
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i % hw];
                        break;
                }
            }
            if (ib >= 0) {
                auto& gb = t.adjoint(ib);
                switch (mode) {
                    case Mode::Equal:
                        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
                        break;
                    case Mode::ChannelVec:
                        for (std::size_t i = 0; i < n; ++i) gb[i / hw] += g[i] * pa[i];
                        break;
                    case Mode::OneChannelMap:
                        for (std::size_t i = 0; i < n; ++i) gb[i % hw] += g[i] * pa[i];
                        break;
                }
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, real c) {
    Tensor out(a.shape());
    real* o = out.mutable_data();
    const real* pa = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = pa[i] * c;
    out.set_requires_grad(a.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ia = tp->input_id(a);
        tp->record(out, [ia, c](Tape& t, const std::vector<real>& g) {
            if (ia < 0) return;
            auto& ga = t.adjoint(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

// Numerically stable logistic; saturates instead of overflowing.
inline real sigmoid_scalar(real x) {
    if (x >= 0) {
        return real(1) / (real(1) + std::exp(-x));
    }
    const real e = std::exp(x);
    return e / (real(1) + e);
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    real* o = out.mutable_data();
    const real* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = sigmoid_scalar(px[i]);
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix, out](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            const real* s = out.data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (real(1) - s[i]);
        });
    }
    return out;
}

inline Tensor tanh(const Tensor& x) {
    Tensor out(x.shape());
    real* o = out.mutable_data();
    const real* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = std::tanh(px[i]);
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix, out](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            const real* h = out.data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (real(1) - h[i] * h[i]);
        });
    }
    return out;
}

// Subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    real* o = out.mutable_data();
    const real* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = px[i] > real(0) ? px[i] : real(0);
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix, x](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            const real* px = x.data();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (px[i] > real(0)) gx[i] += g[i];
        });
    }
    return out;
}

// Concatenates rank-3 feature maps along the channel axis, order preserved.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const std::size_t h = xs[0].extent(1), w = xs[0].extent(2);
    std::size_t channels = 0;
    bool any_grad = false;
    for (const Tensor& x : xs) {
        if (x.rank() != 3 || x.extent(1) != h || x.extent(2) != w)
            throw ShapeError("concat_channels: incompatible extents " + shape_string(x.shape()) +
                             " vs " + shape_string(xs[0].shape()));
        channels += x.extent(0);
        any_grad = any_grad || x.requires_grad();
    }

    Tensor out({channels, h, w});
    real* o = out.mutable_data();
    std::size_t offset = 0;
    for (const Tensor& x : xs) {
        std::memcpy(o + offset, x.data(), x.size() * sizeof(real));
        offset += x.size();
    }
    out.set_requires_grad(any_grad);

    if (Tape* tp = detail::recording_tape(any_grad)) {
        std::vector<int> ids;
        std::vector<std::size_t> sizes;
        ids.reserve(xs.size());
        for (const Tensor& x : xs) {
            ids.push_back(tp->input_id(x));
            sizes.push_back(x.size());
        }
        tp->record(out, [ids, sizes](Tape& t, const std::vector<real>& g) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (ids[k] >= 0) {
                    auto& gx = t.adjoint(ids[k]);
                    for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += g[off + i];
                }
                off += sizes[k];
            }
        });
    }
    return out;
}

// Channel range [c0, c1) of a rank-3 feature map.
inline Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (x.rank() != 3 || c0 >= c1 || c1 > x.extent(0))
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") for " + shape_string(x.shape()));
    const std::size_t hw = x.extent(1) * x.extent(2);
    Tensor out({c1 - c0, x.extent(1), x.extent(2)});
    std::memcpy(out.mutable_data(), x.data() + c0 * hw, out.size() * sizeof(real));
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        const std::size_t off = c0 * hw;
        tp->record(out, [ix, off](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    real acc = 0;
    const real* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
    Tensor out = Tensor::scalar(acc);
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        const std::size_t n = x.size();
        tp->record(out, [ix, n](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), real(1) / static_cast<real>(x.size())); }

// ---------------------------------------------------------------------------
// Parameter: named learnable tensor with a gradient accumulator.
// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {
        value.set_requires_grad(true);
    }

    void zero_grad() { std::fill_n(grad.mutable_data(), grad.size(), real(0)); }

    // Adds this parameter's adjoint from a finished tape into `grad`.
    void accumulate_from(const Tape& tape) {
        Tensor g = tape.grad(value);
        real* pg = grad.mutable_data();
        const real* ps = g.data();
        for (std::size_t i = 0; i < grad.size(); ++i) pg[i] += ps[i];
    }
};

// ---------------------------------------------------------------------------
// Central finite-difference verification of reverse-mode gradients.
// ---------------------------------------------------------------------------

struct GradCheckDetail {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Compares the taped gradient of scalar f() against central differences over
// every element of every parameter. Perturbation passes run untaped.
inline GradCheckDetail finite_difference_report(const std::vector<Parameter*>& params,
                                                const std::function<Tensor()>& f, double eps = 1e-5) {
    if (eps <= 0) throw DataError("finite_difference_check: eps must be > 0");

    std::vector<Tensor> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = f();
        tape.backward(y);
        for (Parameter* p : params) {
            Tensor g = tape.grad(p->value);
            if (!all_finite(g)) throw DataError("non-finite gradient for parameter " + p->name);
            analytic.push_back(std::move(g));
        }
    }

    GradCheckDetail out;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        real* w = p->value.mutable_data();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const real saved = w[i];
            w[i] = saved + static_cast<real>(eps);
            const real fp = f()[0];
            w[i] = saved - static_cast<real>(eps);
            const real fm = f()[0];
            w[i] = saved;
            const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][i]);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > out.max_rel_err) {
                out.max_rel_err = rel;
                out.worst_param = p->name;
                out.worst_index = i;
            }
        }
    }
    return out;
}

inline double finite_difference_check(const std::vector<Parameter*>& params, const std::function<Tensor()>& f,
                                      double eps = 1e-5) {
    return finite_difference_report(params, f, eps).max_rel_err;
}

}  // namespace fusioncast
