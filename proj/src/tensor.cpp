#include "ainet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace ainet {

namespace autograd {

namespace {
bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace autograd

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

static std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values) {
    for (int64_t d : shape) check(d > 0, "tensor dims must be positive, got " + shape_str(shape));
    check(numel_of(shape) == static_cast<int64_t>(values.size()),
          "shape " + shape_str(shape) + " does not match data length " +
              std::to_string(values.size()));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return impl;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
    return wrap(make_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::zeros(Shape shape) {
    auto n = numel_of(shape);
    return from_vector(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    auto n = numel_of(shape);
    return from_vector(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return from_vector({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    auto n = numel_of(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return from_vector(std::move(shape), std::move(v));
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    auto n = numel_of(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return from_vector(std::move(shape), std::move(v));
}

double Tensor::value() const {
    check(numel() == 1, "value() requires a scalar tensor, shape is " + shape_str(shape()));
    return impl_->data[0];
}

static size_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
    check(idx.size() == shape.size(), "index rank mismatch");
    size_t flat = 0;
    size_t i = 0;
    for (int64_t ix : idx) {
        check(ix >= 0 && ix < shape[i], "index out of range");
        flat = flat * static_cast<size_t>(shape[i]) + static_cast<size_t>(ix);
        ++i;
    }
    return flat;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    return impl_->data[flat_index(impl_->shape, idx)];
}

void Tensor::set(std::initializer_list<int64_t> idx, double v) {
    impl_->data[flat_index(impl_->shape, idx)] = v;
}

std::vector<double>& Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    check(!impl_->grad.empty(), "tensor has no grad");
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::detach() const {
    return from_vector(impl_->shape, impl_->data);
}

Tensor Tensor::clone() const {
    Tensor t = from_vector(impl_->shape, impl_->data);
    t.set_requires_grad(impl_->requires_grad);
    return t;
}

// ---------------------------------------------------------------------------
// Graph recording helpers
// ---------------------------------------------------------------------------

static bool any_requires_grad(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (t.defined() && t.requires_grad()) return true;
    return false;
}

// Create the op output; wires a grad node when recording is active.
static Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(const Tensor&)> backward_fn) {
    Tensor out = Tensor::from_vector(std::move(shape), std::move(values));
    if (autograd::grad_enabled() && any_requires_grad(inputs)) {
        out.set_requires_grad(true);
        auto node = std::make_shared<autograd::Node>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->apply = std::move(backward_fn);
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

// grad buffer of t, allocated on demand (only called for graph participants)
static std::vector<double>& grad_buf(const Tensor& t) {
    auto& impl = *t.impl();
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    return impl.grad;
}

// ---------------------------------------------------------------------------
// Broadcasting machinery
// ---------------------------------------------------------------------------

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const size_t ra = a.size(), rb = b.size();
    const size_t r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da == db || da == 1 || db == 1) {
            out[i] = std::max(da, db);
        } else {
            fail("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
        }
    }
    return out;
}

// Row-major strides; broadcast dims (size 1 against larger) get stride 0.
static std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const size_t r = out.size();
    const size_t ri = in.size();
    std::vector<int64_t> strides(r, 0);
    int64_t acc = 1;
    for (size_t k = ri; k-- > 0;) {
        int64_t own = acc;
        acc *= in[k];
        size_t oi = k + (r - ri);
        strides[oi] = (in[k] == 1 && out[oi] != 1) ? 0 : own;
    }
    return strides;
}

// Iterate the out shape as an odometer carrying per-operand offsets.
template <typename Fn>
static void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                               const std::vector<int64_t>& sb, Fn&& fn) {
    const size_t r = out.size();
    const int64_t total = numel_of(out);
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
        fn(static_cast<size_t>(flat), static_cast<size_t>(oa), static_cast<size_t>(ob));
        for (size_t k = r; k-- > 0;) {
            ++idx[k];
            oa += sa[k];
            ob += sb[k];
            if (idx[k] < out[k]) break;
            oa -= sa[k] * out[k];
            ob -= sb[k] * out[k];
            idx[k] = 0;
        }
    }
}

namespace {

// true when `in` broadcasts as a contiguous suffix of `out` (or equals it)
bool is_suffix_shape(const Shape& in, const Shape& out) {
    if (in.size() > out.size()) return false;
    for (size_t i = 0; i < in.size(); ++i)
        if (in[in.size() - 1 - i] != out[out.size() - 1 - i]) return false;
    return true;
}

}  // namespace

// Generic broadcasting binary op with analytic partials.
// FwdFn: double(double a, double b); PaFn/PbFn: partial wrt a / b given (a,b,y).
template <typename FwdFn, typename PaFn, typename PbFn>
static Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, FwdFn fwd,
                                 PaFn pa, PbFn pb) {
    Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    const int64_t n = numel_of(out_shape);
    std::vector<double> out(static_cast<size_t>(n));
    CostCounter::bump(n);

    const double* A = a.ptr();
    const double* B = b.ptr();
    const bool fast_a = is_suffix_shape(a.shape(), out_shape);
    const bool fast_b = is_suffix_shape(b.shape(), out_shape);
    if (fast_a && fast_b) {
        const size_t na = static_cast<size_t>(a.numel()), nb = static_cast<size_t>(b.numel());
        for (size_t i = 0; i < static_cast<size_t>(n); ++i)
            out[i] = fwd(A[i % na], B[i % nb]);
    } else {
        auto sa = broadcast_strides(a.shape(), out_shape);
        auto sb = broadcast_strides(b.shape(), out_shape);
        for_each_broadcast(out_shape, sa, sb,
                           [&](size_t o, size_t ia, size_t ib) { out[o] = fwd(A[ia], B[ib]); });
    }

    Tensor a_in = a, b_in = b;
    return make_result(
        name, std::move(out_shape), std::move(out), {a, b},
        [a_in, b_in, pa, pb](const Tensor& res) {
            const auto& g = res.grad();
            const double* A2 = a_in.ptr();
            const double* B2 = b_in.ptr();
            const double* Y = res.ptr();
            const bool need_a = a_in.requires_grad();
            const bool need_b = b_in.requires_grad();
            double* ga = need_a ? grad_buf(a_in).data() : nullptr;
            double* gb = need_b ? grad_buf(b_in).data() : nullptr;
            const size_t n = g.size();
            if (a_in.shape() == res.shape() && b_in.shape() == res.shape()) {
                for (size_t i = 0; i < n; ++i) {
                    const double go = g[i];
                    if (need_a) ga[i] += go * pa(A2[i], B2[i], Y[i]);
                    if (need_b) gb[i] += go * pb(A2[i], B2[i], Y[i]);
                }
            } else if (is_suffix_shape(a_in.shape(), res.shape()) &&
                       is_suffix_shape(b_in.shape(), res.shape())) {
                const size_t na = static_cast<size_t>(a_in.numel());
                const size_t nb = static_cast<size_t>(b_in.numel());
                for (size_t i = 0; i < n; ++i) {
                    const double go = g[i];
                    const size_t ia = i % na, ib = i % nb;
                    if (need_a) ga[ia] += go * pa(A2[ia], B2[ib], Y[i]);
                    if (need_b) gb[ib] += go * pb(A2[ia], B2[ib], Y[i]);
                }
            } else {
                auto sa = broadcast_strides(a_in.shape(), res.shape());
                auto sb = broadcast_strides(b_in.shape(), res.shape());
                for_each_broadcast(res.shape(), sa, sb, [&](size_t o, size_t ia, size_t ib) {
                    const double go = g[o];
                    if (need_a) ga[ia] += go * pa(A2[ia], B2[ib], Y[o]);
                    if (need_b) gb[ib] += go * pb(A2[ia], B2[ib], Y[o]);
                });
            }
        });
}

template <typename FwdFn, typename DFn>
static Tensor unary_elementwise(const char* name, const Tensor& x, FwdFn fwd, DFn dfdx) {
    const int64_t n = x.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* X = x.ptr();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(X[i]);
    CostCounter::bump(n);
    Tensor x_in = x;
    return make_result(name, x.shape(), std::move(out), {x},
                       [x_in, dfdx](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const auto& g = res.grad();
                           const double* X2 = x_in.ptr();
                           const double* Y = res.ptr();
                           double* gx = grad_buf(x_in).data();
                           const size_t n2 = g.size();
                           for (size_t i = 0; i < n2; ++i) gx[i] += g[i] * dfdx(X2[i], Y[i]);
                       });
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_elementwise(
        "scale", x, [factor](double v) { return v * factor; },
        [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& x) {
    return unary_elementwise(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

static double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        "sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
    return unary_elementwise(
        "silu", x, [](double v) { return v * sigmoid_scalar(v); },
        [](double v, double) {
            const double s = sigmoid_scalar(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

static double softplus_scalar(double v) {
    if (v > 30.0) return v;
    if (v < -30.0) return std::exp(v);
    return std::log1p(std::exp(v));
}

Tensor softplus(const Tensor& x) {
    return unary_elementwise(
        "softplus", x, softplus_scalar, [](double v, double) { return sigmoid_scalar(v); });
}

Tensor exp(const Tensor& x) {
    return unary_elementwise(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_elementwise(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    return unary_elementwise(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

// phi1(s) = expm1(s)/s, the exact ZOH input factor; series below 1e-8 per the
// zero-A limit guard (phi1 -> 1), expm1 keeps it cancellation-free elsewhere.
static double phi1_scalar(double s) {
    if (std::fabs(s) < 1e-8) return 1.0;
    return std::expm1(s) / s;
}

// d/ds phi1(s) = (expm1(s)*(s-1) + s)/s^2, series for small |s|
static double phi1_deriv_scalar(double s) {
    if (std::fabs(s) < 1e-4) return 0.5 + s / 3.0 + s * s / 8.0;
    return (std::expm1(s) * (s - 1.0) + s) / (s * s);
}

// same derivative from a cached e^s (avoids the transcendental on hot paths)
static double phi1_deriv_from(double s, double es) {
    if (std::fabs(s) < 1e-4) return 0.5 + s / 3.0 + s * s / 8.0;
    return ((es - 1.0) * (s - 1.0) + s) / (s * s);
}

Tensor phi1(const Tensor& x) {
    return unary_elementwise(
        "phi1", x, phi1_scalar, [](double v, double) { return phi1_deriv_scalar(v); });
}

Tensor elementwise(EwKind kind, const std::vector<Tensor>& inputs, double factor) {
    auto unary = [&]() -> const Tensor& {
        check(inputs.size() == 1, "elementwise: expected 1 input");
        return inputs[0];
    };
    auto binary = [&]() { check(inputs.size() == 2, "elementwise: expected 2 inputs"); };
    switch (kind) {
        case EwKind::Add: binary(); return add(inputs[0], inputs[1]);
        case EwKind::Sub: binary(); return sub(inputs[0], inputs[1]);
        case EwKind::Mul: binary(); return mul(inputs[0], inputs[1]);
        case EwKind::Tanh: return tanh(unary());
        case EwKind::Silu: return silu(unary());
        case EwKind::Softplus: return softplus(unary());
        case EwKind::Exp: return exp(unary());
        case EwKind::Scale: return scale(unary(), factor);
    }
    fail("elementwise: unknown kind");
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

namespace {

// C += A(m,k) * B(k,n)
void mm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A(m,k) * B(n,k)^T
void mm_nt(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C += A(k,m)^T * B(k,n)
void mm_tn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const double* a = A + p * m;
        const double* b = B + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

struct BatchedLayout {
    Shape batch;          // broadcast batch shape
    std::vector<int64_t> sa, sb;  // per-batch-dim strides in units of one matrix
    int64_t count;
};

BatchedLayout batch_layout(const Shape& a, const Shape& b) {
    Shape ba(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
    BatchedLayout out;
    out.batch = broadcast_shapes(ba, bb);
    out.sa = broadcast_strides(ba, out.batch);
    out.sb = broadcast_strides(bb, out.batch);
    out.count = numel_of(out.batch);
    return out;
}

template <typename Fn>
void for_each_batch(const BatchedLayout& lay, Fn&& fn) {
    const size_t r = lay.batch.size();
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t flat = 0; flat < lay.count; ++flat) {
        fn(flat, oa, ob);
        for (size_t k = r; k-- > 0;) {
            ++idx[k];
            oa += lay.sa[k];
            ob += lay.sb[k];
            if (idx[k] < lay.batch[k]) break;
            oa -= lay.sa[k] * lay.batch[k];
            ob -= lay.sb[k] * lay.batch[k];
            idx[k] = 0;
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() >= 2 && b.rank() >= 2,
          "matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
    const int64_t m = a.dim(a.rank() - 2);
    const int64_t k = a.dim(a.rank() - 1);
    const int64_t k2 = b.dim(b.rank() - 2);
    const int64_t n = b.dim(b.rank() - 1);
    check(k == k2, "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));

    BatchedLayout lay = batch_layout(a.shape(), b.shape());
    Shape out_shape = lay.batch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    std::vector<double> out(static_cast<size_t>(lay.count * m * n), 0.0);
    const double* A = a.ptr();
    const double* B = b.ptr();
    for_each_batch(lay, [&](int64_t flat, int64_t oa, int64_t ob) {
        mm_nn(A + oa * m * k, B + ob * k * n, out.data() + flat * m * n, m, k, n);
    });
    CostCounter::bump(lay.count * m * k * n);

    Tensor a_in = a, b_in = b;
    return make_result(
        "matmul", std::move(out_shape), std::move(out), {a, b},
        [a_in, b_in, lay, m, k, n](const Tensor& res) {
            const double* G = res.grad().data();
            const bool need_a = a_in.requires_grad();
            const bool need_b = b_in.requires_grad();
            double* GA = need_a ? grad_buf(a_in).data() : nullptr;
            double* GB = need_b ? grad_buf(b_in).data() : nullptr;
            const double* A2 = a_in.ptr();
            const double* B2 = b_in.ptr();
            for_each_batch(lay, [&](int64_t flat, int64_t oa, int64_t ob) {
                const double* g = G + flat * m * n;
                if (need_a) mm_nt(g, B2 + ob * k * n, GA + oa * m * k, m, n, k);
                if (need_b) mm_tn(A2 + oa * m * k, g, GB + ob * k * n, k, m, n);
            });
        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    Tensor y = matmul(x, w);
    if (bias.defined()) y = add(y, bias);
    return y;
}

// ---------------------------------------------------------------------------
// layer_norm / softmax / reductions
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check(x.rank() >= 1, "layer_norm: x must have rank >= 1");
    const int64_t C = x.dim(x.rank() - 1);
    check(C >= 1, "layer_norm: channel dim must be >= 1");
    check(eps > 0.0, "layer_norm: eps must be > 0");
    check(gamma.numel() == C && beta.numel() == C,
          "layer_norm: gamma/beta must have " + std::to_string(C) + " elements");
    const int64_t rows = x.numel() / C;

    std::vector<double> out(static_cast<size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<size_t>(rows));
    std::vector<double> xhat(static_cast<size_t>(x.numel()));
    const double* X = x.ptr();
    const double* Gm = gamma.ptr();
    const double* Bt = beta.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = X + r * C;
        double mean = 0.0;
        for (int64_t c = 0; c < C; ++c) mean += xr[c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = xr[c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = istd;
        double* hr = xhat.data() + r * C;
        double* yr = out.data() + r * C;
        for (int64_t c = 0; c < C; ++c) {
            hr[c] = (xr[c] - mean) * istd;
            yr[c] = Gm[c] * hr[c] + Bt[c];
        }
    }
    CostCounter::bump(6 * rows * C);

    Tensor x_in = x, g_in = gamma, b_in = beta;
    auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
    auto istd_s = std::make_shared<std::vector<double>>(std::move(inv_std));
    return make_result(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [x_in, g_in, b_in, xhat_s, istd_s, C, rows](const Tensor& res) {
            const double* G = res.grad().data();
            const double* H = xhat_s->data();
            const double* Gm2 = g_in.ptr();
            double* gx = x_in.requires_grad() ? grad_buf(x_in).data() : nullptr;
            double* gg = g_in.requires_grad() ? grad_buf(g_in).data() : nullptr;
            double* gb = b_in.requires_grad() ? grad_buf(b_in).data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = G + r * C;
                const double* hr = H + r * C;
                if (gg || gb) {
                    for (int64_t c = 0; c < C; ++c) {
                        if (gg) gg[c] += gr[c] * hr[c];
                        if (gb) gb[c] += gr[c];
                    }
                }
                if (gx) {
                    // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        const double dh = gr[c] * Gm2[c];
                        m1 += dh;
                        m2 += dh * hr[c];
                    }
                    m1 /= static_cast<double>(C);
                    m2 /= static_cast<double>(C);
                    const double istd = (*istd_s)[static_cast<size_t>(r)];
                    double* gxr = gx + r * C;
                    for (int64_t c = 0; c < C; ++c) {
                        const double dh = gr[c] * Gm2[c];
                        gxr[c] += istd * (dh - m1 - hr[c] * m2);
                    }
                }
            }
        });
}

Tensor softmax(const Tensor& x) {
    const int64_t C = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / C;
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double* X = x.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = X + r * C;
        double* yr = out.data() + r * C;
        double mx = xr[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            denom += yr[c];
        }
        const double inv = 1.0 / denom;
        for (int64_t c = 0; c < C; ++c) yr[c] *= inv;
    }
    CostCounter::bump(4 * rows * C);

    Tensor x_in = x;
    return make_result("softmax", x.shape(), std::move(out), {x},
                       [x_in, C, rows](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const double* G = res.grad().data();
                           const double* Y = res.ptr();
                           double* gx = grad_buf(x_in).data();
                           for (int64_t r = 0; r < rows; ++r) {
                               const double* gr = G + r * C;
                               const double* yr = Y + r * C;
                               double dot = 0.0;
                               for (int64_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
                               double* gxr = gx + r * C;
                               for (int64_t c = 0; c < C; ++c)
                                   gxr[c] += yr[c] * (gr[c] - dot);
                           }
                       });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    CostCounter::bump(x.numel());
    Tensor x_in = x;
    return make_result("sum", {1}, {acc}, {x}, [x_in](const Tensor& res) {
        if (!x_in.requires_grad()) return;
        const double g = res.grad()[0];
        double* gx = grad_buf(x_in).data();
        const size_t n = x_in.data().size();
        for (size_t i = 0; i < n; ++i) gx[i] += g;
    });
}

static Tensor reduce_axis(const char* name, const Tensor& x, int axis, bool take_mean) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, "reduce: axis out of range");
    const int64_t axis_n = x.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);

    Shape out_shape;
    for (int i = 0; i < r; ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
    const double* X = x.ptr();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < axis_n; ++a) {
            const double* src = X + (o * axis_n + a) * inner;
            double* dst = out.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    const double denom = take_mean ? static_cast<double>(axis_n) : 1.0;
    if (take_mean)
        for (auto& v : out) v /= denom;
    CostCounter::bump(x.numel() + (take_mean ? outer * inner : 0));

    Tensor x_in = x;
    return make_result(name, std::move(out_shape), std::move(out), {x},
                       [x_in, outer, inner, axis_n, denom](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const double* G = res.grad().data();
                           double* gx = grad_buf(x_in).data();
                           for (int64_t o = 0; o < outer; ++o)
                               for (int64_t a = 0; a < axis_n; ++a) {
                                   double* dst = gx + (o * axis_n + a) * inner;
                                   const double* src = G + o * inner;
                                   for (int64_t i = 0; i < inner; ++i)
                                       dst[i] += src[i] / denom;
                               }
                       });
}

Tensor sum(const Tensor& x, int axis) { return reduce_axis("sum_axis", x, axis, false); }
Tensor mean(const Tensor& x, int axis) { return reduce_axis("mean_axis", x, axis, true); }

// ---------------------------------------------------------------------------
// concat / split / views
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
    check(!tensors.empty(), "concat: needs at least one tensor");
    const int r = tensors[0].rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, "concat: axis out of range");
    int64_t axis_total = 0;
    for (const auto& t : tensors) {
        check(t.rank() == r, "concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis)
                check(t.dim(i) == tensors[0].dim(i),
                      "concat: non-axis dims differ, " + shape_str(t.shape()) + " vs " +
                          shape_str(tensors[0].shape()));
        axis_total += t.dim(axis);
    }
    Shape out_shape = tensors[0].shape();
    out_shape[static_cast<size_t>(axis)] = axis_total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];

    std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
    int64_t offset = 0;
    for (const auto& t : tensors) {
        const int64_t an = t.dim(axis);
        const double* src = t.ptr();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * axis_total + offset) * inner,
                        src + o * an * inner, static_cast<size_t>(an * inner) * sizeof(double));
        offset += an;
    }

    std::vector<Tensor> ins = tensors;
    return make_result("concat", std::move(out_shape), std::move(out), tensors,
                       [ins, outer, inner, axis_total, axis](const Tensor& res) {
                           const double* G = res.grad().data();
                           int64_t off = 0;
                           for (const auto& t : ins) {
                               const int64_t an = t.dim(axis);
                               if (t.requires_grad()) {
                                   double* gt = grad_buf(t).data();
                                   for (int64_t o = 0; o < outer; ++o) {
                                       const double* src = G + (o * axis_total + off) * inner;
                                       double* dst = gt + o * an * inner;
                                       for (int64_t i = 0; i < an * inner; ++i) dst[i] += src[i];
                                   }
                               }
                               off += an;
                           }
                       });
}

std::vector<Tensor> split(const Tensor& x, const std::vector<int64_t>& sizes, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, "split: axis out of range");
    int64_t total = 0;
    for (int64_t s : sizes) {
        check(s > 0, "split: sizes must be positive");
        total += s;
    }
    check(total == x.dim(axis), "split: sizes sum to " + std::to_string(total) +
                                    " but axis has " + std::to_string(x.dim(axis)));

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const int64_t axis_total = x.dim(axis);

    std::vector<Tensor> parts;
    int64_t offset = 0;
    for (int64_t s : sizes) {
        Shape pshape = x.shape();
        pshape[static_cast<size_t>(axis)] = s;
        std::vector<double> pdata(static_cast<size_t>(outer * s * inner));
        const double* X = x.ptr();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(pdata.data() + o * s * inner, X + (o * axis_total + offset) * inner,
                        static_cast<size_t>(s * inner) * sizeof(double));
        Tensor x_in = x;
        const int64_t off = offset;
        parts.push_back(make_result(
            "split", std::move(pshape), std::move(pdata), {x},
            [x_in, outer, inner, axis_total, off, s](const Tensor& res) {
                if (!x_in.requires_grad()) return;
                const double* G = res.grad().data();
                double* gx = grad_buf(x_in).data();
                for (int64_t o = 0; o < outer; ++o) {
                    double* dst = gx + (o * axis_total + off) * inner;
                    const double* src = G + o * s * inner;
                    for (int64_t i = 0; i < s * inner; ++i) dst[i] += src[i];
                }
            }));
        offset += s;
    }
    return parts;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    check(numel_of(new_shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " to " +
                                                shape_str(new_shape) + " changes element count");
    Tensor x_in = x;
    return make_result("reshape", std::move(new_shape), x.data(), {x},
                       [x_in](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const auto& g = res.grad();
                           double* gx = grad_buf(x_in).data();
                           for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       });
}

Tensor transpose_last(const Tensor& x) {
    check(x.rank() >= 2, "transpose_last: rank must be >= 2");
    const int r = x.rank();
    const int64_t m = x.dim(r - 2), n = x.dim(r - 1);
    const int64_t batch = x.numel() / (m * n);
    Shape out_shape = x.shape();
    std::swap(out_shape[static_cast<size_t>(r - 2)], out_shape[static_cast<size_t>(r - 1)]);
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double* X = x.ptr();
    for (int64_t b = 0; b < batch; ++b) {
        const double* src = X + b * m * n;
        double* dst = out.data() + b * m * n;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
    Tensor x_in = x;
    return make_result("transpose_last", std::move(out_shape), std::move(out), {x},
                       [x_in, batch, m, n](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const double* G = res.grad().data();
                           double* gx = grad_buf(x_in).data();
                           for (int64_t b = 0; b < batch; ++b) {
                               const double* src = G + b * m * n;
                               double* dst = gx + b * m * n;
                               for (int64_t i = 0; i < m; ++i)
                                   for (int64_t j = 0; j < n; ++j)
                                       dst[i * n + j] += src[j * m + i];
                           }
                       });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    check(x.rank() == 3, "gather_rows: expected [B,L,C], got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    check(static_cast<int64_t>(rows.size()) == B, "gather_rows: one row index per batch element");
    for (int64_t r : rows) check(r >= 0 && r < L, "gather_rows: index out of range");
    std::vector<double> out(static_cast<size_t>(B * C));
    const double* X = x.ptr();
    for (int64_t b = 0; b < B; ++b)
        std::memcpy(out.data() + b * C, X + (b * L + rows[static_cast<size_t>(b)]) * C,
                    static_cast<size_t>(C) * sizeof(double));
    Tensor x_in = x;
    auto rows_copy = rows;
    return make_result("gather_rows", {B, C}, std::move(out), {x},
                       [x_in, rows_copy, L, C](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const double* G = res.grad().data();
                           double* gx = grad_buf(x_in).data();
                           const int64_t B2 = x_in.dim(0);
                           for (int64_t b = 0; b < B2; ++b) {
                               double* dst = gx + (b * L + rows_copy[static_cast<size_t>(b)]) * C;
                               const double* src = G + b * C;
                               for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
                           }
                       });
}

Tensor slice_tokens(const Tensor& x, int64_t start, int64_t len) {
    check(x.rank() == 3, "slice_tokens: expected [B,L,C]");
    const int64_t L = x.dim(1);
    check(start >= 0 && len > 0 && start + len <= L, "slice_tokens: range out of bounds");
    auto parts = [&] {
        std::vector<int64_t> sizes;
        if (start > 0) sizes.push_back(start);
        sizes.push_back(len);
        if (start + len < L) sizes.push_back(L - start - len);
        return split(x, sizes, 1);
    }();
    return parts[start > 0 ? 1 : 0];
}

Tensor reorder_blocks(const Tensor& x, const std::vector<std::vector<int64_t>>& order,
                      int64_t block_len) {
    check(x.rank() == 3, "reorder_blocks: expected [B,L,C]");
    const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    check(L % block_len == 0, "reorder_blocks: token count " + std::to_string(L) +
                                  " not divisible into blocks of " + std::to_string(block_len));
    const int64_t N = L / block_len;
    check(static_cast<int64_t>(order.size()) == B, "reorder_blocks: one order per batch element");
    for (const auto& ord : order) {
        check(static_cast<int64_t>(ord.size()) == N, "reorder_blocks: order length mismatch");
        std::vector<bool> seen(static_cast<size_t>(N), false);
        for (int64_t v : ord) {
            check(v >= 0 && v < N && !seen[static_cast<size_t>(v)],
                  "reorder_blocks: order is not a permutation of 0.." + std::to_string(N - 1));
            seen[static_cast<size_t>(v)] = true;
        }
    }

    const int64_t blk = block_len * C;
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double* X = x.ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < N; ++j)
            std::memcpy(out.data() + (b * N + j) * blk,
                        X + (b * N + order[static_cast<size_t>(b)][static_cast<size_t>(j)]) * blk,
                        static_cast<size_t>(blk) * sizeof(double));

    Tensor x_in = x;
    auto ord_copy = order;
    return make_result("reorder_blocks", x.shape(), std::move(out), {x},
                       [x_in, ord_copy, N, blk, B](const Tensor& res) {
                           if (!x_in.requires_grad()) return;
                           const double* G = res.grad().data();
                           double* gx = grad_buf(x_in).data();
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t j = 0; j < N; ++j) {
                                   double* dst =
                                       gx + (b * N + ord_copy[static_cast<size_t>(b)]
                                                             [static_cast<size_t>(j)]) * blk;
                                   const double* src = G + (b * N + j) * blk;
                                   for (int64_t i = 0; i < blk; ++i) dst[i] += src[i];
                               }
                       });
}

// ---------------------------------------------------------------------------
// causal depthwise conv1d
// ---------------------------------------------------------------------------

Tensor causal_dwconv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check(x.rank() == 3, "causal_dwconv1d: expected x [B,L,D]");
    check(w.rank() == 2, "causal_dwconv1d: expected w [D,K]");
    const int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    const int64_t K = w.dim(1);
    check(w.dim(0) == D, "causal_dwconv1d: channel mismatch, x has " + std::to_string(D) +
                             " channels, w has " + std::to_string(w.dim(0)));
    if (bias.defined()) check(bias.numel() == D, "causal_dwconv1d: bias size mismatch");

    std::vector<double> out(static_cast<size_t>(x.numel()), 0.0);
    const double* X = x.ptr();
    const double* W = w.ptr();
    const double* Bi = bias.defined() ? bias.ptr() : nullptr;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < L; ++t) {
            double* yr = out.data() + (b * L + t) * D;
            for (int64_t j = 0; j < K; ++j) {
                const int64_t s = t - (K - 1) + j;
                if (s < 0) continue;
                const double* xr = X + (b * L + s) * D;
                for (int64_t d = 0; d < D; ++d) yr[d] += W[d * K + j] * xr[d];
            }
            if (Bi)
                for (int64_t d = 0; d < D; ++d) yr[d] += Bi[d];
        }
    CostCounter::bump(B * L * D * (K + (bias.defined() ? 1 : 0)));

    Tensor x_in = x, w_in = w, b_in = bias;
    std::vector<Tensor> ins = {x, w};
    if (bias.defined()) ins.push_back(bias);
    return make_result(
        "causal_dwconv1d", x.shape(), std::move(out), std::move(ins),
        [x_in, w_in, b_in, B, L, D, K](const Tensor& res) {
            const double* G = res.grad().data();
            const double* X2 = x_in.ptr();
            const double* W2 = w_in.ptr();
            double* gx = x_in.requires_grad() ? grad_buf(x_in).data() : nullptr;
            double* gw = w_in.requires_grad() ? grad_buf(w_in).data() : nullptr;
            double* gb = (b_in.defined() && b_in.requires_grad()) ? grad_buf(b_in).data() : nullptr;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < L; ++t) {
                    const double* gr = G + (b * L + t) * D;
                    for (int64_t j = 0; j < K; ++j) {
                        const int64_t s = t - (K - 1) + j;
                        if (s < 0) continue;
                        const double* xr = X2 + (b * L + s) * D;
                        double* gxr = gx ? gx + (b * L + s) * D : nullptr;
                        for (int64_t d = 0; d < D; ++d) {
                            if (gxr) gxr[d] += W2[d * K + j] * gr[d];
                            if (gw) gw[d * K + j] += xr[d] * gr[d];
                        }
                    }
                    if (gb)
                        for (int64_t d = 0; d < D; ++d) gb[d] += gr[d];
                }
        });
}

// ---------------------------------------------------------------------------
// selective scan (fused forward + analytic VJP)
// ---------------------------------------------------------------------------

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bp,
                      const Tensor& Cp, const Tensor& d_skip) {
    check(u.rank() == 3, "selective_scan: u must be [B,L,D]");
    const int64_t B = u.dim(0), L = u.dim(1), D = u.dim(2);
    check(delta.rank() == 3 && delta.shape() == u.shape(),
          "selective_scan: delta shape " + shape_str(delta.shape()) + " must match u " +
              shape_str(u.shape()));
    check(A.rank() == 2 && A.dim(0) == D, "selective_scan: A must be [D,N]");
    const int64_t N = A.dim(1);
    check(Bp.rank() == 3 && Bp.dim(0) == B && Bp.dim(1) == L && Bp.dim(2) == N,
          "selective_scan: Bp must be [B,L,N]");
    check(Cp.shape() == Bp.shape(), "selective_scan: Cp must match Bp shape");
    const bool skip = d_skip.defined();
    if (skip) check(d_skip.numel() == D, "selective_scan: d_skip must be [D]");

    std::vector<double> out(static_cast<size_t>(B * L * D));
    // forward checkpoints for the backward pass, layout [B,D,L,N]:
    // h states plus the per-step exp(s) and phi1(s) factors
    const bool record = autograd::grad_enabled() && any_requires_grad({u, delta, A, Bp, Cp, d_skip});
    auto hsave = std::make_shared<std::vector<double>>();
    auto essave = std::make_shared<std::vector<double>>();
    auto p1save = std::make_shared<std::vector<double>>();
    if (record) {
        hsave->resize(static_cast<size_t>(B * D * L * N));
        essave->resize(static_cast<size_t>(B * D * L * N));
        p1save->resize(static_cast<size_t>(B * D * L * N));
    }

    const double* U = u.ptr();
    const double* Dt = delta.ptr();
    const double* Aw = A.ptr();
    const double* Bw = Bp.ptr();
    const double* Cw = Cp.ptr();
    const double* Sk = skip ? d_skip.ptr() : nullptr;

    for (int64_t b = 0; b < B; ++b)
        for (int64_t d = 0; d < D; ++d) {
            const double* a = Aw + d * N;
            const int64_t row = (b * D + d) * L * N;
            double hprev[64];
            check(N <= 64, "selective_scan: state size > 64 not supported");
            for (int64_t n = 0; n < N; ++n) hprev[n] = 0.0;
            for (int64_t t = 0; t < L; ++t) {
                const double dt = Dt[(b * L + t) * D + d];
                const double ut = U[(b * L + t) * D + d];
                const double* bt = Bw + (b * L + t) * N;
                const double* ct = Cw + (b * L + t) * N;
                double y = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const double s = dt * a[n];
                    const double abar = std::exp(s);
                    const double p1 = phi1_scalar(s);
                    const double bbar = dt * p1 * bt[n];
                    const double h = abar * hprev[n] + bbar * ut;
                    if (record) {
                        (*hsave)[static_cast<size_t>(row + t * N + n)] = h;
                        (*essave)[static_cast<size_t>(row + t * N + n)] = abar;
                        (*p1save)[static_cast<size_t>(row + t * N + n)] = p1;
                    }
                    y += ct[n] * h;
                    hprev[n] = h;
                }
                if (skip) y += Sk[d] * ut;
                out[static_cast<size_t>((b * L + t) * D + d)] = y;
            }
        }
    CostCounter::bump(B * L * D * (10 * N + (skip ? 2 : 0)));
    ScanStats::state_updates() += B * L * D * N;

    Tensor u_in = u, dt_in = delta, a_in = A, b_in = Bp, c_in = Cp, sk_in = d_skip;
    std::vector<Tensor> ins = {u, delta, A, Bp, Cp};
    if (skip) ins.push_back(d_skip);
    return make_result(
        "selective_scan", u.shape(), std::move(out), std::move(ins),
        [u_in, dt_in, a_in, b_in, c_in, sk_in, hsave, essave, p1save, B, L, D, N,
         skip](const Tensor& res) {
            const double* G = res.grad().data();
            const double* U = u_in.ptr();
            const double* Dt = dt_in.ptr();
            const double* Aw = a_in.ptr();
            const double* Bw = b_in.ptr();
            const double* Cw = c_in.ptr();
            const double* Sk = skip ? sk_in.ptr() : nullptr;
            double* gu = u_in.requires_grad() ? grad_buf(u_in).data() : nullptr;
            double* gdt = dt_in.requires_grad() ? grad_buf(dt_in).data() : nullptr;
            double* ga = a_in.requires_grad() ? grad_buf(a_in).data() : nullptr;
            double* gb = b_in.requires_grad() ? grad_buf(b_in).data() : nullptr;
            double* gc = c_in.requires_grad() ? grad_buf(c_in).data() : nullptr;
            double* gsk = (skip && sk_in.requires_grad()) ? grad_buf(sk_in).data() : nullptr;

            std::vector<double> dh(static_cast<size_t>(N));
            for (int64_t b = 0; b < B; ++b)
                for (int64_t d = 0; d < D; ++d) {
                    const double* a = Aw + d * N;
                    const int64_t row = (b * D + d) * L * N;
                    const double* hrow = hsave->data() + row;
                    const double* esrow = essave->data() + row;
                    const double* p1row = p1save->data() + row;
                    std::fill(dh.begin(), dh.end(), 0.0);
                    for (int64_t t = L - 1; t >= 0; --t) {
                        const double gy = G[(b * L + t) * D + d];
                        const double dt = Dt[(b * L + t) * D + d];
                        const double ut = U[(b * L + t) * D + d];
                        const double* bt = Bw + (b * L + t) * N;
                        const double* ct = Cw + (b * L + t) * N;
                        const double* ht = hrow + t * N;
                        const double* hprev = t > 0 ? hrow + (t - 1) * N : nullptr;
                        double du_acc = skip ? Sk[d] * gy : 0.0;
                        double ddt_acc = 0.0;
                        if (gsk) gsk[d] += ut * gy;
                        for (int64_t n = 0; n < N; ++n) {
                            // dL/dh_t gets the local y term plus what flowed back
                            double dht = dh[static_cast<size_t>(n)] + ct[n] * gy;
                            if (gc) gc[(b * L + t) * N + n] += ht[n] * gy;

                            const double s = dt * a[n];
                            const double es = esrow[t * N + n];
                            const double p1 = p1row[t * N + n];
                            const double p1d = phi1_deriv_from(s, es);
                            const double hp = hprev ? hprev[n] : 0.0;

                            // h_t = e^s * h_{t-1} + dt*phi1(s)*Bn*u_t
                            const double dAbar = dht * hp;
                            const double dBbar = dht * ut;
                            du_acc += dt * p1 * bt[n] * dht;
                            if (gb) gb[(b * L + t) * N + n] += dt * p1 * dBbar;
                            // s = dt*a: dAbar/ds = e^s; dBbar/ds via product rule on dt*phi1(s)
                            ddt_acc += dAbar * a[n] * es + dBbar * bt[n] * (p1 + s * p1d);
                            if (ga) ga[d * N + n] += dAbar * dt * es + dBbar * dt * dt * p1d * bt[n];
                            // flow into h_{t-1}
                            dh[static_cast<size_t>(n)] = dht * es;
                        }
                        if (gu) gu[(b * L + t) * D + d] += du_acc;
                        if (gdt) gdt[(b * L + t) * D + d] += ddt_acc;
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// backward driver
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    check(loss.defined(), "backward: undefined tensor");
    check(loss.numel() == 1,
          "backward: loss must be scalar, shape is " + shape_str(loss.shape()));
    check(loss.requires_grad(), "backward: loss does not require grad");

    // iterative post-order DFS over grad_fn edges
    std::vector<Tensor> topo;
    std::unordered_set<const TensorImpl*> visited;
    std::vector<std::pair<Tensor, size_t>> stack;
    stack.emplace_back(loss, 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        auto& node = t.impl()->grad_fn;
        if (!node || next >= node->inputs.size()) {
            topo.push_back(t);
            stack.pop_back();
            continue;
        }
        Tensor child = node->inputs[next++];
        if (child.defined() && child.requires_grad() &&
            visited.insert(child.impl().get()).second) {
            stack.emplace_back(child, 0);
        }
    }

    loss.impl()->grad.assign(1, 1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        auto node = it->impl()->grad_fn;
        if (!node) continue;
        if (!it->impl()->grad.empty()) node->apply(*it);
        it->impl()->grad_fn.reset();  // release graph as we go
    }
}

}  // namespace ainet
