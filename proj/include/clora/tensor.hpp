#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clora/rng.hpp"

namespace clora {

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorData {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated lazily by the backward pass
};

// Value-semantic handle onto a shared buffer. Copies alias; use clone() for a
// deep copy. Gradient state lives alongside the data so parameters keep their
// accumulated grads between backward and the optimizer step.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : d_(std::make_shared<TensorData>()) {
        if (shape_numel(shape) != static_cast<long long>(values.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        d_->shape         = std::move(shape);
        d_->data          = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
    }
    static Tensor full(Shape shape, double v) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    long long size() const { return static_cast<long long>(d_->data.size()); }

    std::vector<double>& values() { return d_->data; }
    const std::vector<double>& values() const { return d_->data; }
    double item() const {
        if (size() != 1) throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
        return d_->data[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<double>& grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->data.size(), 0.0);
        return d_->grad;
    }
    void zero_grad() { d_->grad.clear(); }

    Tensor clone() const {
        Tensor t(d_->shape, d_->data, d_->requires_grad);
        return t;
    }

    bool same_buffer(const Tensor& o) const { return d_ == o.d_; }
    std::shared_ptr<TensorData> node() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

inline Tensor randn(Shape shape, Rng& rng) {
    auto n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    auto n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return Tensor(std::move(shape), std::move(v));
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

/*========================================== Tape ==========================================*/

// Define-by-run gradient tape. Records are appended in execution order, which
// is already topological, so the backward pass is a single reverse sweep.
// One tape per training step; nothing is reused across steps.
class Tape {
public:
    struct Record {
        const char* op;
        std::function<void()> backprop;
    };

    Tape()                       = default;
    Tape(const Tape&)            = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* t = nullptr;
        return t;
    }

    void record(const char* op, std::function<void()> fn) { records_.push_back({op, std::move(fn)}); }
    size_t size() const { return records_.size(); }

    void run_backward() {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backprop();
    }

private:
    std::vector<Record> records_;
};

struct TapeScope {
    explicit TapeScope(Tape& t) : prev_(Tape::active()) { Tape::active() = &t; }
    ~TapeScope() { Tape::active() = prev_; }
    TapeScope(const TapeScope&)            = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    Tape* prev_;
};

namespace detail {

inline bool taping(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline std::vector<double>& ensure_grad(TensorData& d) {
    if (d.grad.empty()) d.grad.assign(d.data.size(), 0.0);
    return d.grad;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// Accumulates d(root)/d(leaf) into every requires_grad leaf reachable from
// root. Root must be scalar and recorded on the active tape.
inline void backward(const Tensor& root) {
    Tape* tape = Tape::active();
    if (!tape) throw std::runtime_error("backward: no active tape");
    if (root.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad())
        throw std::invalid_argument("backward: root is not on the tape (requires_grad is false)");
    Tensor r = root;
    r.grad()[0] += 1.0;
    tape->run_backward();
}

/*======================================= primitives =======================================*/

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    Tensor y(a.shape(), std::move(out));
    if (detail::taping({&a, &b})) {
        y.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        Tape::active()->record("add", [ad, bd, yd] {
            if (yd->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::ensure_grad(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += yd->grad[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::ensure_grad(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] += yd->grad[i];
            }
        });
    }
    return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    Tensor y(a.shape(), std::move(out));
    if (detail::taping({&a, &b})) {
        y.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        Tape::active()->record("sub", [ad, bd, yd] {
            if (yd->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::ensure_grad(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += yd->grad[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::ensure_grad(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] -= yd->grad[i];
            }
        });
    }
    return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    Tensor y(a.shape(), std::move(out));
    if (detail::taping({&a, &b})) {
        y.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        Tape::active()->record("mul", [ad, bd, yd] {
            if (yd->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::ensure_grad(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += yd->grad[i] * bd->data[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::ensure_grad(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] += yd->grad[i] * ad->data[i];
            }
        });
    }
    return y;
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    Tensor y(a.shape(), std::move(out));
    if (detail::taping({&a})) {
        y.set_requires_grad(true);
        auto ad = a.node(), yd = y.node();
        Tape::active()->record("scale", [ad, yd, s] {
            if (yd->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::ensure_grad(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += yd->grad[i] * s;
            }
        });
    }
    return y;
}

// matmul:  a[..., k] x b[k, n] -> [..., n]     (a rank >= 1)
//          a[..., k] x b[k]    -> [...]        (a rank >= 2, matrix-vector)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    int k, n;
    Shape out_shape;
    if (b.rank() == 2) {
        k = bs[0];
        n = bs[1];
        if (a.rank() < 1 || as.back() != k)
            throw std::invalid_argument("matmul: shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
        out_shape.assign(as.begin(), as.end() - 1);
        out_shape.push_back(n);
    } else if (b.rank() == 1) {
        k = bs[0];
        n = 1;
        if (a.rank() < 2 || as.back() != k)
            throw std::invalid_argument("matmul: shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
        out_shape.assign(as.begin(), as.end() - 1);
    } else {
        throw std::invalid_argument("matmul: rhs must be rank 1 or 2, got " + shape_str(bs));
    }
    const long long m = a.size() / k;
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (long long i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
            double aik = av[static_cast<size_t>(i * k + kk)];
            for (int j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] += aik * bv[static_cast<size_t>(kk * n + j)];
        }
    Tensor y(std::move(out_shape), std::move(out));
    if (detail::taping({&a, &b})) {
        y.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        Tape::active()->record("matmul", [ad, bd, yd, m, k, n] {
            if (yd->grad.empty()) return;
            const auto& og = yd->grad;
            if (ad->requires_grad) {
                auto& ga = detail::ensure_grad(*ad);
                for (long long i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j)
                            acc += og[static_cast<size_t>(i * n + j)] * bd->data[static_cast<size_t>(kk * n + j)];
                        ga[static_cast<size_t>(i * k + kk)] += acc;
                    }
            }
            if (bd->requires_grad) {
                auto& gb = detail::ensure_grad(*bd);
                for (long long i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double aik = ad->data[static_cast<size_t>(i * k + kk)];
                        for (int j = 0; j < n; ++j)
                            gb[static_cast<size_t>(kk * n + j)] += aik * og[static_cast<size_t>(i * n + j)];
                    }
            }
        });
    }
    return y;
}

// 3x3 convolution, stride 1, zero padding 1 ("same"), channels-last layout.
// x [H,W,Cin]; kernel [Cout,Cin,3,3] or the flat form [Cout,Cin*9]; bias [Cout].
inline Tensor conv2d_3x3_same(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    if (x.rank() != 3)
        throw std::invalid_argument("conv2d: input must be [H,W,C], got " + shape_str(x.shape()));
    const int H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
    int Cout;
    if (kernel.rank() == 4) {
        if (kernel.shape()[1] != Cin || kernel.shape()[2] != 3 || kernel.shape()[3] != 3)
            throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) +
                                        " does not fit input " + shape_str(x.shape()));
        Cout = kernel.shape()[0];
    } else if (kernel.rank() == 2) {
        if (kernel.shape()[1] != Cin * 9)
            throw std::invalid_argument("conv2d: flat kernel " + shape_str(kernel.shape()) +
                                        " does not fit input " + shape_str(x.shape()));
        Cout = kernel.shape()[0];
    } else {
        throw std::invalid_argument("conv2d: kernel must be rank 4 or 2, got " + shape_str(kernel.shape()));
    }
    if (bias.rank() != 1 || bias.shape()[0] != Cout)
        throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) + " does not match Cout=" +
                                    std::to_string(Cout));

    std::vector<double> out(static_cast<size_t>(H) * W * Cout);
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    const auto& bv = bias.values();
    for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx)
            for (int co = 0; co < Cout; ++co) {
                double acc = bv[co];
                for (int dy = 0; dy < 3; ++dy) {
                    int iy = yy + dy - 1;
                    if (iy < 0 || iy >= H) continue;
                    for (int dx = 0; dx < 3; ++dx) {
                        int ix = xx + dx - 1;
                        if (ix < 0 || ix >= W) continue;
                        const size_t xbase = (static_cast<size_t>(iy) * W + ix) * Cin;
                        const size_t kbase = ((static_cast<size_t>(co) * Cin) * 9) + dy * 3 + dx;
                        for (int ci = 0; ci < Cin; ++ci)
                            acc += xv[xbase + ci] * kv[kbase + static_cast<size_t>(ci) * 9];
                    }
                }
                out[(static_cast<size_t>(yy) * W + xx) * Cout + co] = acc;
            }
    Tensor y({H, W, Cout}, std::move(out));
    if (detail::taping({&x, &kernel, &bias})) {
        y.set_requires_grad(true);
        auto xd = x.node(), kd = kernel.node(), bd = bias.node(), yd = y.node();
        Tape::active()->record("conv2d", [xd, kd, bd, yd, H, W, Cin, Cout] {
            if (yd->grad.empty()) return;
            const auto& og   = yd->grad;
            const bool wantx = xd->requires_grad, wantk = kd->requires_grad, wantb = bd->requires_grad;
            if (wantx) detail::ensure_grad(*xd);
            if (wantk) detail::ensure_grad(*kd);
            if (wantb) detail::ensure_grad(*bd);
            for (int yy = 0; yy < H; ++yy)
                for (int xx = 0; xx < W; ++xx)
                    for (int co = 0; co < Cout; ++co) {
                        double g = og[(static_cast<size_t>(yy) * W + xx) * Cout + co];
                        if (g == 0.0) continue;
                        if (wantb) bd->grad[co] += g;
                        if (!wantx && !wantk) continue;
                        for (int dy = 0; dy < 3; ++dy) {
                            int iy = yy + dy - 1;
                            if (iy < 0 || iy >= H) continue;
                            for (int dx = 0; dx < 3; ++dx) {
                                int ix = xx + dx - 1;
                                if (ix < 0 || ix >= W) continue;
                                const size_t xbase = (static_cast<size_t>(iy) * W + ix) * Cin;
                                const size_t kbase = ((static_cast<size_t>(co) * Cin) * 9) + dy * 3 + dx;
                                for (int ci = 0; ci < Cin; ++ci) {
                                    if (wantx) xd->grad[xbase + ci] += g * kd->data[kbase + static_cast<size_t>(ci) * 9];
                                    if (wantk) kd->grad[kbase + static_cast<size_t>(ci) * 9] += g * xd->data[xbase + ci];
                                }
                            }
                        }
                    }
        });
    }
    return y;
}

inline Tensor silu(const Tensor& x) {
    std::vector<double> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = x.values()[i];
        out[i]   = v / (1.0 + std::exp(-v));
    }
    Tensor y(x.shape(), std::move(out));
    if (detail::taping({&x})) {
        y.set_requires_grad(true);
        auto xd = x.node(), yd = y.node();
        Tape::active()->record("silu", [xd, yd] {
            if (yd->grad.empty()) return;
            if (!xd->requires_grad) return;
            auto& g = detail::ensure_grad(*xd);
            for (size_t i = 0; i < g.size(); ++i) {
                double v = xd->data[i];
                double s = 1.0 / (1.0 + std::exp(-v));
                g[i] += yd->grad[i] * s * (1.0 + v * (1.0 - s));
            }
        });
    }
    return y;
}

inline Tensor reduce_mean(const Tensor& x) {
    const double n = static_cast<double>(x.size());
    double acc     = 0.0;
    for (double v : x.values()) acc += v;
    Tensor y({1}, {acc / n});
    if (detail::taping({&x})) {
        y.set_requires_grad(true);
        auto xd = x.node(), yd = y.node();
        Tape::active()->record("reduce_mean", [xd, yd, n] {
            if (yd->grad.empty()) return;
            if (!xd->requires_grad) return;
            auto& g        = detail::ensure_grad(*xd);
            const double s = yd->grad[0] / n;
            for (double& gi : g) gi += s;
        });
    }
    return y;
}

// mean squared error over all elements
inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mse", a, b);
    const double n = static_cast<double>(a.size());
    double acc     = 0.0;
    for (size_t i = 0; i < a.values().size(); ++i) {
        double d = a.values()[i] - b.values()[i];
        acc += d * d;
    }
    Tensor y({1}, {acc / n});
    if (detail::taping({&a, &b})) {
        y.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        Tape::active()->record("mse", [ad, bd, yd, n] {
            if (yd->grad.empty()) return;
            const double s = 2.0 * yd->grad[0] / n;
            if (ad->requires_grad) {
                auto& g = detail::ensure_grad(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += s * (ad->data[i] - bd->data[i]);
            }
            if (bd->requires_grad) {
                auto& g = detail::ensure_grad(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] -= s * (ad->data[i] - bd->data[i]);
            }
        });
    }
    return y;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

enum class PrimOp { add, sub, mul, scale, matmul, conv2d_3x3_same, silu, reduce_mean, mse };

// Uniform dispatcher over the closed primitive set. scale takes its factor as
// a shape-[1] tensor; conv2d may omit the bias (treated as zeros).
inline Tensor primitive_forward(PrimOp op, const std::vector<Tensor>& in) {
    auto want = [&](size_t n) {
        if (in.size() != n)
            throw std::invalid_argument("primitive_forward: wrong input count " + std::to_string(in.size()));
    };
    switch (op) {
        case PrimOp::add: want(2); return add(in[0], in[1]);
        case PrimOp::sub: want(2); return sub(in[0], in[1]);
        case PrimOp::mul: want(2); return mul(in[0], in[1]);
        case PrimOp::scale: want(2); return scale(in[0], in[1].item());
        case PrimOp::matmul: want(2); return matmul(in[0], in[1]);
        case PrimOp::conv2d_3x3_same:
            if (in.size() == 2) {
                int cout = in[1].shape()[0];
                return conv2d_3x3_same(in[0], in[1], Tensor::zeros({cout}));
            }
            want(3);
            return conv2d_3x3_same(in[0], in[1], in[2]);
        case PrimOp::silu: want(1); return silu(in[0]);
        case PrimOp::reduce_mean: want(1); return reduce_mean(in[0]);
        case PrimOp::mse: want(2); return mse(in[0], in[1]);
    }
    throw std::invalid_argument("primitive_forward: unknown op");
}

/*======================================= grad check =======================================*/

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// f must be scalar-valued and rebuild its graph from x on each call.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x_in, double h) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    Tensor x     = x_in;
    bool old_rg  = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    std::vector<double> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f(x);
        backward(loss);
        analytic = x.grad();
    }
    x.zero_grad();
    double max_rel = 0.0;
    auto& v        = x.values();
    for (size_t i = 0; i < v.size(); ++i) {
        const double orig = v[i];
        v[i]              = orig + h;
        double up         = f(x).item();
        v[i]              = orig - h;
        double dn         = f(x).item();
        v[i]              = orig;
        double num = (up - dn) / (2.0 * h);
        double rel = std::abs(analytic[i] - num) / std::max(1.0, std::abs(analytic[i]));
        max_rel    = std::max(max_rel, rel);
    }
    x.set_requires_grad(old_rg);
    return max_rel;
}

// Same check for a multi-parameter program, probing a random subset of
// coordinates across all parameters.
inline double grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                int probes, double h, Rng& rng) {
    if (h <= 0.0) throw std::invalid_argument("grad_check_params: h must be positive");
    for (auto& p : params) {
        Tensor t = p;
        t.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f();
        backward(loss);
        for (auto& p : params) {
            Tensor t = p;
            analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.values().size(), 0.0));
        }
    }
    long long total = 0;
    for (auto& p : params) total += p.size();
    double max_rel = 0.0;
    for (int probe = 0; probe < probes; ++probe) {
        long long c = static_cast<long long>(rng.uniform() * static_cast<double>(total));
        c           = std::min(c, total - 1);
        size_t pi   = 0;
        while (c >= params[pi].size()) {
            c -= params[pi].size();
            ++pi;
        }
        Tensor p          = params[pi];
        auto& v           = p.values();
        const auto idx    = static_cast<size_t>(c);
        const double orig = v[idx];
        v[idx]            = orig + h;
        double up         = f().item();
        v[idx]            = orig - h;
        double dn         = f().item();
        v[idx]            = orig;
        double num = (up - dn) / (2.0 * h);
        double a   = analytic[pi][idx];
        double rel = std::abs(a - num) / std::max(1.0, std::abs(a));
        max_rel    = std::max(max_rel, rel);
    }
    for (auto& p : params) {
        Tensor t = p;
        t.zero_grad();
    }
    return max_rel;
}

}  // namespace clora
