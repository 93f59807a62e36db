#pragma once

// Dense float64 tensors and a define-by-run reverse-mode tape with the
// handful of primitives the supernet needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "uraenas/errors.hpp"

namespace uraenas {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Row-major float64 array. Plain value type; gradients live on the tape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel(shape_))
            throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty() && shape_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double item() const {
        if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        if (o.shape_ != shape_)
            throw DimensionError("tensor +=: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape lives.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    inline const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Ordered record of primitive operations. Adjoints are replayed in reverse
/// record order by backward(). A tape is rebuilt for every forward pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Non-differentiable input, copied onto the tape.
    Var constant(Tensor value) {
        Node n;
        n.owned = std::move(value);
        return push(std::move(n));
    }

    /// Non-differentiable input referenced in place. `value` must outlive the tape.
    Var reference(const Tensor& value) {
        Node n;
        n.external = &value;
        return push(std::move(n));
    }

    /// Differentiable leaf owned by the tape; its gradient accumulates across
    /// backward() calls and is read with grad().
    Var variable(Tensor value) {
        Node n;
        n.owned = std::move(value);
        n.requires_grad = true;
        n.leaf = true;
        return push(std::move(n));
    }

    /// Differentiable leaf referencing an external value whose gradient is
    /// accumulated into `grad_sink` at the end of each backward(). A null sink
    /// records the value as a constant.
    Var parameter(const Tensor& value, Tensor* grad_sink) {
        Node n;
        n.external = &value;
        if (grad_sink) {
            if (grad_sink->shape() != value.shape())
                throw DimensionError("parameter: grad buffer " + shape_str(grad_sink->shape()) +
                                     " vs value " + shape_str(value.shape()));
            n.requires_grad = true;
            n.leaf = true;
            n.sink = grad_sink;
        }
        return push(std::move(n));
    }

    /// Records the output of a primitive. The adjoint closure runs only when
    /// at least one input requires a gradient.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
        Node n;
        n.owned = std::move(value);
        for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
        if (n.requires_grad) {
            n.inputs = std::move(inputs);
            n.backward = std::move(fn);
        }
        return push(std::move(n));
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.owned;
    }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(const Var& v) const { return requires_grad(v.id()); }

    /// Gradient buffer of node `id`, zero-allocated on first use.
    Tensor& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.size() == 0 && numel(value(id).shape()) != 0) n.grad = Tensor(value(id).shape());
        if (n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape());
        return n.grad;
    }

    /// Gradient accumulated on `v` by backward(); zeros when nothing flowed.
    Tensor grad(const Var& v) const {
        check_owner(v);
        const Node& n = nodes_.at(v.id());
        if (n.grad.shape() == value(v.id()).shape() && n.grad.size() == value(v.id()).size()) return n.grad;
        return Tensor(value(v.id()).shape());
    }

    const Tensor& upstream(std::size_t id) const { return nodes_.at(id).grad; }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Replays adjoints from the scalar `loss`. Intermediate gradients are
    /// reset on every call; leaf gradients and parameter sinks accumulate.
    void backward(const Var& loss) {
        check_owner(loss);
        if (value(loss.id()).size() != 1)
            throw UsageError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id()).shape()));
        for (auto& n : nodes_)
            if (!n.leaf || n.sink) n.grad = Tensor();
        if (!nodes_[loss.id()].requires_grad) return;
        grad_buffer(loss.id())[0] += 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, i);
        }
        for (auto& n : nodes_)
            if (n.sink && n.grad.size() == n.sink->size() && n.grad.shape() == n.sink->shape()) *n.sink += n.grad;
    }

    void check_owner(const Var& v) const {
        if (v.tape() != this) throw UsageError("variable does not belong to this tape");
    }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        bool leaf = false;
        Tensor* sink = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw UsageError("use of an empty Var");
    return tape_->value(id_);
}

namespace detail {

inline Tape& same_tape(std::initializer_list<Var> vars) {
    Tape* t = nullptr;
    for (const auto& v : vars) {
        if (!v.valid()) throw UsageError("empty Var passed to an op");
        if (t && v.tape() != t) throw UsageError("op inputs recorded on different tapes");
        t = v.tape();
    }
    return *t;
}

inline void expect_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
}

} // namespace detail

inline Var add(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape())
        throw DimensionError("add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor out = av;
    out += bv;
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
        if (t.requires_grad(ib)) t.grad_buffer(ib) += g;
    });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape())
        throw DimensionError("mul: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(const Var& x, double s) {
    Tape& tape = detail::same_tape({x});
    Tensor out = x.value();
    for (auto& v : out.values()) v *= s;
    const std::size_t ix = x.id();
    return tape.record(std::move(out), {ix}, [ix, s](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
}

/// Sum of all elements as a scalar.
inline Var sum(const Var& x) {
    Tape& tape = detail::same_tape({x});
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    const std::size_t ix = x.id();
    return tape.record(Tensor::scalar(s), {ix}, [ix](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0];
        Tensor& gx = t.grad_buffer(ix);
        for (auto& v : gx.values()) v += g;
    });
}

/// max(x, 0); the adjoint uses subgradient 0 at x = 0.
inline Var relu(const Var& x) {
    Tape& tape = detail::same_tape({x});
    Tensor out = x.value();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    const std::size_t ix = x.id();
    return tape.record(std::move(out), {ix}, [ix](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& xv = t.value(ix);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

namespace detail {

/// Geometry of a 2-D convolution; im2col columns are ordered (n, oy, ox) and
/// rows (c, ky, kx).
struct ConvGeometry {
    long N, C, H, W, F, K, s, p, Ho, Wo;

    long rows() const { return C * K * K; }
    long cols() const { return N * Ho * Wo; }

    static long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

    /// Output columns ox whose input column ox*s + kx - p lies inside [0, W).
    void col_range(long kx, long& lo, long& hi) const {
        lo = std::max(0L, -floor_div(kx - p, s));
        hi = std::min(Wo - 1, floor_div(W - 1 + p - kx, s));
    }

    void im2col(const double* X, double* col) const {
        const long HoWo = Ho * Wo;
        for (long c = 0; c < C; ++c)
            for (long ky = 0; ky < K; ++ky)
                for (long kx = 0; kx < K; ++kx) {
                    double* dst = col + ((c * K + ky) * K + kx) * cols();
                    long lo, hi;
                    col_range(kx, lo, hi);
                    for (long n = 0; n < N; ++n) {
                        const double* xp = X + (n * C + c) * H * W;
                        double* d = dst + n * HoWo;
                        for (long oy = 0; oy < Ho; ++oy) {
                            const long iy = oy * s + ky - p;
                            double* drow = d + oy * Wo;
                            if (iy < 0 || iy >= H || lo > hi) {
                                std::fill_n(drow, Wo, 0.0);
                                continue;
                            }
                            const double* xrow = xp + iy * W + kx - p;
                            for (long ox = 0; ox < lo; ++ox) drow[ox] = 0.0;
                            if (s == 1) {
                                std::copy(xrow + lo, xrow + hi + 1, drow + lo);
                            } else {
                                for (long ox = lo; ox <= hi; ++ox) drow[ox] = xrow[ox * s];
                            }
                            for (long ox = hi + 1; ox < Wo; ++ox) drow[ox] = 0.0;
                        }
                    }
                }
    }

    void col2im_add(const double* col, double* GX) const {
        const long HoWo = Ho * Wo;
        for (long c = 0; c < C; ++c)
            for (long ky = 0; ky < K; ++ky)
                for (long kx = 0; kx < K; ++kx) {
                    const double* src = col + ((c * K + ky) * K + kx) * cols();
                    long lo, hi;
                    col_range(kx, lo, hi);
                    for (long n = 0; n < N; ++n) {
                        double* gp = GX + (n * C + c) * H * W;
                        const double* sp = src + n * HoWo;
                        for (long oy = 0; oy < Ho; ++oy) {
                            const long iy = oy * s + ky - p;
                            if (iy < 0 || iy >= H) continue;
                            double* grow = gp + iy * W + kx - p;
                            const double* srow = sp + oy * Wo;
                            if (s == 1) {
                                for (long ox = lo; ox <= hi; ++ox) grow[ox] += srow[ox];
                            } else {
                                for (long ox = lo; ox <= hi; ++ox) grow[ox * s] += srow[ox];
                            }
                        }
                    }
                }
    }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

} // namespace detail

/// Cross-correlation of x [N,C,H,W] with kernel [F,C,k,k], k in {1,3}, zero
/// padding. Lowered to im2col and a single matrix product per call.
inline Var conv2d(const Var& x, const Var& kernel, int stride, int padding) {
    Tape& tape = detail::same_tape({x, kernel});
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    detail::expect_rank(xv, 4, "conv2d", "input");
    detail::expect_rank(kv, 4, "conv2d", "kernel");
    if (xv.dim(1) != kv.dim(1))
        throw DimensionError("conv2d: input channels (axis 1) = " + std::to_string(xv.dim(1)) +
                             " but kernel channels (axis 1) = " + std::to_string(kv.dim(1)));
    if (kv.dim(2) != kv.dim(3) || (kv.dim(2) != 1 && kv.dim(2) != 3))
        throw DimensionError("conv2d: kernel spatial axes (2,3) must be 1x1 or 3x3, got " + shape_str(kv.shape()));
    if (stride < 1 || padding < 0) throw InputError("conv2d: stride must be >= 1 and padding >= 0");
    detail::ConvGeometry g{long(xv.dim(0)), long(xv.dim(1)), long(xv.dim(2)), long(xv.dim(3)), long(kv.dim(0)),
                           long(kv.dim(2)), stride, padding, 0, 0};
    if (g.H + 2 * g.p < g.K || g.W + 2 * g.p < g.K)
        throw DimensionError("conv2d: spatial axes (2,3) of " + shape_str(xv.shape()) + " smaller than kernel");
    g.Ho = (g.H + 2 * g.p - g.K) / g.s + 1;
    g.Wo = (g.W + 2 * g.p - g.K) / g.s + 1;
    const long HoWo = g.Ho * g.Wo;

    std::shared_ptr<double[]> col = std::make_unique_for_overwrite<double[]>(std::size_t(g.rows() * g.cols()));
    g.im2col(xv.data(), col.get());
    detail::RowMatrix prod = detail::ConstMatMap(kv.data(), g.F, g.rows()) * detail::ConstMatMap(col.get(), g.rows(), g.cols());
    Tensor out({std::size_t(g.N), std::size_t(g.F), std::size_t(g.Ho), std::size_t(g.Wo)});
    for (long n = 0; n < g.N; ++n)
        for (long f = 0; f < g.F; ++f)
            std::copy_n(prod.data() + f * g.cols() + n * HoWo, HoWo, out.data() + (n * g.F + f) * HoWo);

    const std::size_t ix = x.id(), ik = kernel.id();
    if (!tape.requires_grad(ik)) col.reset();
    return tape.record(std::move(out), {ix, ik}, [g, ix, ik, col](Tape& t, std::size_t self) {
        const long HoWo = g.Ho * g.Wo;
        const Tensor& G = t.upstream(self);
        detail::RowMatrix gout(g.F, g.cols());
        for (long n = 0; n < g.N; ++n)
            for (long f = 0; f < g.F; ++f)
                std::copy_n(G.data() + (n * g.F + f) * HoWo, HoWo, gout.data() + f * g.cols() + n * HoWo);
        if (t.requires_grad(ik)) {
            detail::MatMap gk(t.grad_buffer(ik).data(), g.F, g.rows());
            gk.noalias() += gout * detail::ConstMatMap(col.get(), g.rows(), g.cols()).transpose();
        }
        if (t.requires_grad(ix)) {
            detail::RowMatrix gcol = detail::ConstMatMap(t.value(ik).data(), g.F, g.rows()).transpose() * gout;
            g.col2im_add(gcol.data(), t.grad_buffer(ix).data());
        }
    });
}

namespace detail {

/// Zero-padded 3x3 box sum of one H x W plane (stride 1).
inline void box_sum3(const double* src, double* dst, double* tmp, long H, long W) {
    for (long y = 0; y < H; ++y) {
        const double* r = src + y * W;
        double* t = tmp + y * W;
        for (long x = 0; x < W; ++x) {
            double a = r[x];
            if (x > 0) a += r[x - 1];
            if (x + 1 < W) a += r[x + 1];
            t[x] = a;
        }
    }
    for (long y = 0; y < H; ++y) {
        double* d = dst + y * W;
        const double* t0 = tmp + y * W;
        std::copy_n(t0, W, d);
        if (y > 0)
            for (long x = 0; x < W; ++x) d[x] += t0[x - W];
        if (y + 1 < H)
            for (long x = 0; x < W; ++x) d[x] += t0[x + W];
    }
}

inline long window_count(long o, long s, long extent) {
    return std::min(extent - 1, o * s + 1) - std::max(0L, o * s - 1) + 1;
}

} // namespace detail

/// 3x3 average pooling with padding 1; each cell divides by the number of
/// in-bounds inputs in its window.
inline Var avg_pool3x3(const Var& x, int stride) {
    Tape& tape = detail::same_tape({x});
    const Tensor& xv = x.value();
    detail::expect_rank(xv, 4, "avg_pool3x3", "input");
    const long N = long(xv.dim(0)), C = long(xv.dim(1)), H = long(xv.dim(2)), W = long(xv.dim(3));
    if (H < 1 || W < 1) throw DimensionError("avg_pool3x3: spatial axes (2,3) must be >= 1, got " + shape_str(xv.shape()));
    if (stride < 1) throw InputError("avg_pool3x3: stride must be >= 1");
    const long s = stride;
    const long Ho = (H - 1) / s + 1, Wo = (W - 1) / s + 1;
    Tensor out({std::size_t(N), std::size_t(C), std::size_t(Ho), std::size_t(Wo)});
    // Reciprocal in-bounds counts per output cell.
    std::vector<double> inv(std::size_t(Ho * Wo));
    for (long oy = 0; oy < Ho; ++oy)
        for (long ox = 0; ox < Wo; ++ox)
            inv[std::size_t(oy * Wo + ox)] = 1.0 / double(detail::window_count(oy, s, H) * detail::window_count(ox, s, W));
    const double* X = xv.data();
    double* O = out.data();
    std::vector<double> box(std::size_t(H * W)), tmp(std::size_t(H * W));
    for (long nc = 0; nc < N * C; ++nc) {
        detail::box_sum3(X + nc * H * W, box.data(), tmp.data(), H, W);
        double* op = O + nc * Ho * Wo;
        for (long oy = 0; oy < Ho; ++oy)
            for (long ox = 0; ox < Wo; ++ox)
                op[oy * Wo + ox] = box[std::size_t(oy * s * W + ox * s)] * inv[std::size_t(oy * Wo + ox)];
    }
    const std::size_t ix = x.id();
    return tape.record(std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const double* G = t.upstream(self).data();
        double* GX = t.grad_buffer(ix).data();
        // The zero-padded box sum is self-adjoint: scatter the scaled upstream
        // onto the strided grid, box-sum it, accumulate.
        std::vector<double> grid(std::size_t(H * W)), box(std::size_t(H * W)), tmp(std::size_t(H * W));
        for (long nc = 0; nc < N * C; ++nc) {
            const double* gp = G + nc * Ho * Wo;
            if (s != 1) std::fill(grid.begin(), grid.end(), 0.0);
            for (long oy = 0; oy < Ho; ++oy)
                for (long ox = 0; ox < Wo; ++ox)
                    grid[std::size_t(oy * s * W + ox * s)] = gp[oy * Wo + ox] * inv[std::size_t(oy * Wo + ox)];
            detail::box_sum3(grid.data(), box.data(), tmp.data(), H, W);
            double* gxp = GX + nc * H * W;
            for (long i = 0; i < H * W; ++i) gxp[i] += box[std::size_t(i)];
        }
    });
}

/// [N,C,H,W] -> [N,C] spatial mean.
inline Var global_avg_pool(const Var& x) {
    Tape& tape = detail::same_tape({x});
    const Tensor& xv = x.value();
    detail::expect_rank(xv, 4, "global_avg_pool", "input");
    const std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    if (HW == 0) throw DimensionError("global_avg_pool: empty spatial axes in " + shape_str(xv.shape()));
    Tensor out({N, C});
    for (std::size_t i = 0; i < N * C; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < HW; ++j) acc += xv[i * HW + j];
        out[i] = acc / double(HW);
    }
    const std::size_t ix = x.id();
    return tape.record(std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < N * C; ++i) {
            const double gi = g[i] / double(HW);
            for (std::size_t j = 0; j < HW; ++j) gx[i * HW + j] += gi;
        }
    });
}

/// x [N,D] * weight [D,K] + bias [K].
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
    Tape& tape = detail::same_tape({x, weight, bias});
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    detail::expect_rank(xv, 2, "linear", "input");
    detail::expect_rank(wv, 2, "linear", "weight");
    detail::expect_rank(bv, 1, "linear", "bias");
    const std::size_t N = xv.dim(0), D = xv.dim(1), K = wv.dim(1);
    if (wv.dim(0) != D)
        throw DimensionError("linear: input axis 1 = " + std::to_string(D) + " but weight axis 0 = " +
                             std::to_string(wv.dim(0)));
    if (bv.dim(0) != K)
        throw DimensionError("linear: weight axis 1 = " + std::to_string(K) + " but bias axis 0 = " +
                             std::to_string(bv.dim(0)));
    Tensor out({N, K});
    for (std::size_t n = 0; n < N; ++n) {
        double* o = out.data() + n * K;
        for (std::size_t k = 0; k < K; ++k) o[k] = bv[k];
        for (std::size_t d = 0; d < D; ++d) {
            const double xd = xv[n * D + d];
            const double* w = wv.data() + d * K;
            for (std::size_t k = 0; k < K; ++k) o[k] += xd * w[k];
        }
    }
    const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
    return tape.record(std::move(out), {ix, iw, ib}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        if (t.requires_grad(ix)) {
            Tensor& gx = t.grad_buffer(ix);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < K; ++k) acc += g[n * K + k] * wv[d * K + k];
                    gx[n * D + d] += acc;
                }
        }
        if (t.requires_grad(iw)) {
            Tensor& gw = t.grad_buffer(iw);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t d = 0; d < D; ++d) {
                    const double xd = xv[n * D + d];
                    for (std::size_t k = 0; k < K; ++k) gw[d * K + k] += xd * g[n * K + k];
                }
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k) gb[k] += g[n * K + k];
        }
    });
}

/// Concatenates [N,Ci,H,W] inputs along axis 1.
inline Var concat_channels(std::span<const Var> xs) {
    if (xs.empty()) throw UsageError("concat_channels: no inputs");
    Tape& tape = detail::same_tape({xs[0]});
    const Tensor& first = xs[0].value();
    detail::expect_rank(first, 4, "concat_channels", "input 0");
    const std::size_t N = first.dim(0), H = first.dim(2), W = first.dim(3);
    std::vector<std::size_t> chans, ids;
    std::size_t total = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        detail::same_tape({xs[0], xs[i]});
        const Tensor& v = xs[i].value();
        detail::expect_rank(v, 4, "concat_channels", "input");
        if (v.dim(0) != N || v.dim(2) != H || v.dim(3) != W)
            throw DimensionError("concat_channels: input " + std::to_string(i) + " has shape " + shape_str(v.shape()) +
                                 ", axes 0,2,3 must match " + shape_str(first.shape()));
        chans.push_back(v.dim(1));
        ids.push_back(xs[i].id());
        total += v.dim(1);
    }
    const std::size_t HW = H * W;
    Tensor out({N, total, H, W});
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t c0 = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Tensor& v = xs[i].value();
            std::copy_n(v.data() + n * chans[i] * HW, chans[i] * HW, out.data() + (n * total + c0) * HW);
            c0 += chans[i];
        }
    }
    return tape.record(std::move(out), ids, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        std::size_t c0 = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (t.requires_grad(ids[i])) {
                Tensor& gi = t.grad_buffer(ids[i]);
                for (std::size_t n = 0; n < N; ++n) {
                    const double* src = g.data() + (n * total + c0) * HW;
                    double* dst = gi.data() + n * chans[i] * HW;
                    for (std::size_t j = 0; j < chans[i] * HW; ++j) dst[j] += src[j];
                }
            }
            c0 += chans[i];
        }
    });
}

inline Var concat_channels(std::initializer_list<Var> xs) {
    return concat_channels(std::span<const Var>(xs.begin(), xs.size()));
}

/// sum_k weights[k] * terms[k]. An empty Var in `terms` contributes zero;
/// `out_shape` fixes the result shape even when every term is empty.
inline Var weighted_sum(const Var& weights, std::span<const Var> terms, const Shape& out_shape) {
    Tape& tape = detail::same_tape({weights});
    const Tensor& wv = weights.value();
    detail::expect_rank(wv, 1, "weighted_sum", "weights");
    if (wv.size() != terms.size())
        throw DimensionError("weighted_sum: " + std::to_string(wv.size()) + " weights for " +
                             std::to_string(terms.size()) + " terms");
    std::vector<std::size_t> ids{weights.id()};
    std::vector<long> term_ids(terms.size(), -1);
    Tensor out(out_shape);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (!terms[k].valid()) continue;
        detail::same_tape({weights, terms[k]});
        const Tensor& tv = terms[k].value();
        if (tv.shape() != out_shape)
            throw DimensionError("weighted_sum: term " + std::to_string(k) + " has shape " + shape_str(tv.shape()) +
                                 ", expected " + shape_str(out_shape));
        const double w = wv[k];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * tv[i];
        term_ids[k] = long(terms[k].id());
        ids.push_back(terms[k].id());
    }
    const std::size_t iw = weights.id();
    return tape.record(std::move(out), ids, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& wv = t.value(iw);
        const bool want_w = t.requires_grad(iw);
        Tensor* gw = want_w ? &t.grad_buffer(iw) : nullptr;
        for (std::size_t k = 0; k < term_ids.size(); ++k) {
            if (term_ids[k] < 0) continue;
            const std::size_t it = std::size_t(term_ids[k]);
            const Tensor& tv = t.value(it);
            if (gw) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * tv[i];
                (*gw)[k] += acc;
            }
            if (t.requires_grad(it)) {
                Tensor& gt = t.grad_buffer(it);
                const double w = wv[k];
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += w * g[i];
            }
        }
    });
}

/// Row-wise softmax of a [N,K] array.
inline Tensor softmax_rows(const Tensor& logits) {
    detail::expect_rank(logits, 2, "softmax", "logits");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    Tensor probs(logits.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const double* z = logits.data() + n * K;
        double* p = probs.data() + n * K;
        const double m = *std::max_element(z, z + K);
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k) total += (p[k] = std::exp(z[k] - m));
        for (std::size_t k = 0; k < K; ++k) p[k] /= total;
    }
    return probs;
}

struct CrossEntropy {
    Var loss;     ///< scalar mean negative log-likelihood
    Tensor probs; ///< [N,K] softmax probabilities
};

/// Mean over rows of -log softmax(logits)[label].
inline CrossEntropy softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
    Tape& tape = detail::same_tape({logits});
    const Tensor& zv = logits.value();
    detail::expect_rank(zv, 2, "softmax_cross_entropy", "logits");
    const std::size_t N = zv.dim(0), K = zv.dim(1);
    if (labels.size() != N)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits axis 0 = " +
                             std::to_string(N));
    if (N == 0) throw InputError("softmax_cross_entropy: empty batch");
    for (std::size_t n = 0; n < N; ++n)
        if (labels[n] < 0 || std::size_t(labels[n]) >= K)
            throw InputError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at row " +
                             std::to_string(n) + " outside [0," + std::to_string(K) + ")");
    Tensor probs = softmax_rows(zv);
    double loss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* z = zv.data() + n * K;
        const double m = *std::max_element(z, z + K);
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k) total += std::exp(z[k] - m);
        loss -= z[labels[n]] - m - std::log(total);
    }
    loss /= double(N);
    const std::size_t iz = logits.id();
    std::vector<int> lab(labels.begin(), labels.end());
    Tensor saved = probs;
    Var l = tape.record(Tensor::scalar(loss), {iz}, [=](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0] / double(N);
        Tensor& gz = t.grad_buffer(iz);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k)
                gz[n * K + k] += g * (saved[n * K + k] - (std::size_t(lab[n]) == k ? 1.0 : 0.0));
    });
    return {l, std::move(probs)};
}

/// Central finite-difference gradient of a scalar function of x:
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <class F>
Tensor finite_diff_grad(F&& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw InputError("finite_diff_grad: step must be positive");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(static_cast<const Tensor&>(probe));
        probe[i] = x[i] - h;
        const double fm = f(static_cast<const Tensor&>(probe));
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

} // namespace uraenas
