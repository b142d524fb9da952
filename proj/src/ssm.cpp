#include "ainet/ssm.hpp"

#include <cmath>

namespace ainet {

DiscretizedSsm discretize_zoh(const SsmParams& params, const Tensor& delta) {
    check(delta.defined() && delta.numel() == 1, "discretize_zoh: delta must be a scalar");
    check(delta.value() > 0.0,
          "discretize_zoh: delta must be > 0, got " + std::to_string(delta.value()));
    check(params.b.rank() == 1, "discretize_zoh: expected LTI b of shape [N]");
    check(params.b.numel() == params.state_size(), "discretize_zoh: b length mismatch");

    Tensor a = neg(exp(params.a_log));  // [D,N], strictly negative
    Tensor s = mul(a, delta);           // [D,N]
    Tensor a_bar = exp(s);
    Tensor b_bar = mul(mul(delta, phi1(s)), params.b);  // delta*phi1(s)*B
    return {a_bar, b_bar};
}

DiscretizedSsm discretize_zoh(const SsmParams& params) {
    return discretize_zoh(params, params.delta);
}

Tensor recurrent_scan(const DiscretizedSsm& d, const Tensor& c, const Tensor& x,
                      const Tensor& d_skip) {
    check(x.rank() == 3, "recurrent_scan: x must be [B,L,D]");
    const int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    check(d.a_bar.rank() == 2 && d.a_bar.dim(0) == D, "recurrent_scan: a_bar must be [D,N]");
    const int64_t N = d.a_bar.dim(1);
    check(d.b_bar.shape() == d.a_bar.shape(), "recurrent_scan: b_bar shape mismatch");
    check(c.rank() == 1 && c.numel() == N, "recurrent_scan: c must be [N]");
    if (d_skip.defined()) check(d_skip.numel() == D, "recurrent_scan: d_skip must be [D]");

    std::vector<double> out(static_cast<size_t>(B * L * D));
    const double* A = d.a_bar.ptr();
    const double* Bb = d.b_bar.ptr();
    const double* C = c.ptr();
    const double* X = x.ptr();
    const double* Sk = d_skip.defined() ? d_skip.ptr() : nullptr;
    std::vector<double> h(static_cast<size_t>(N));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t dd = 0; dd < D; ++dd) {
            std::fill(h.begin(), h.end(), 0.0);
            const double* ad = A + dd * N;
            const double* bd = Bb + dd * N;
            for (int64_t t = 0; t < L; ++t) {
                const double xt = X[(b * L + t) * D + dd];
                double y = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    h[static_cast<size_t>(n)] = ad[n] * h[static_cast<size_t>(n)] + bd[n] * xt;
                    y += C[n] * h[static_cast<size_t>(n)];
                }
                if (Sk) y += Sk[dd] * xt;
                out[static_cast<size_t>((b * L + t) * D + dd)] = y;
            }
        }
    return Tensor::from_vector({B, L, D}, std::move(out));
}

void require_lti(const SsmParams& params) {
    check(params.lti(),
          "kernel form requires time-invariant parameters; per-step B/C have no kernel form");
}

Tensor conv_kernel(const DiscretizedSsm& d, const Tensor& c, int64_t len) {
    check(len >= 1, "conv_kernel: length must be >= 1");
    const int64_t D = d.a_bar.dim(0), N = d.a_bar.dim(1);
    check(c.rank() == 1 && c.numel() == N, "conv_kernel: c must be [N]");
    std::vector<double> out(static_cast<size_t>(D * len));
    const double* A = d.a_bar.ptr();
    const double* Bb = d.b_bar.ptr();
    const double* C = c.ptr();
    std::vector<double> pw(static_cast<size_t>(N));
    for (int64_t dd = 0; dd < D; ++dd) {
        const double* ad = A + dd * N;
        for (int64_t n = 0; n < N; ++n) pw[static_cast<size_t>(n)] = Bb[dd * N + n];
        for (int64_t j = 0; j < len; ++j) {
            double k = 0.0;
            for (int64_t n = 0; n < N; ++n) k += C[n] * pw[static_cast<size_t>(n)];
            out[static_cast<size_t>(dd * len + j)] = k;
            for (int64_t n = 0; n < N; ++n) pw[static_cast<size_t>(n)] *= ad[n];
        }
    }
    return Tensor::from_vector({D, len}, std::move(out));
}

Tensor conv_scan(const Tensor& kernel, const Tensor& x, const Tensor& d_skip) {
    check(x.rank() == 3, "conv_scan: x must be [B,L,D]");
    const int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    check(kernel.rank() == 2 && kernel.dim(0) == D, "conv_scan: kernel must be [D,M]");
    const int64_t M = kernel.dim(1);
    if (d_skip.defined()) check(d_skip.numel() == D, "conv_scan: d_skip must be [D]");

    std::vector<double> out(static_cast<size_t>(B * L * D), 0.0);
    const double* K = kernel.ptr();
    const double* X = x.ptr();
    const double* Sk = d_skip.defined() ? d_skip.ptr() : nullptr;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < L; ++t)
            for (int64_t dd = 0; dd < D; ++dd) {
                double y = 0.0;
                const int64_t jmax = std::min<int64_t>(t + 1, M);
                for (int64_t j = 0; j < jmax; ++j)
                    y += K[dd * M + j] * X[(b * L + (t - j)) * D + dd];
                if (Sk) y += Sk[dd] * X[(b * L + t) * D + dd];
                out[static_cast<size_t>((b * L + t) * D + dd)] = y;
            }
    return Tensor::from_vector({B, L, D}, std::move(out));
}

S6Head S6Head::create(ParamStore& store, const std::string& prefix, int64_t channels,
                      int64_t state_size, int64_t dt_rank, bool use_skip) {
    S6Head head;
    head.state_size = state_size;
    head.dt_rank = dt_rank;
    head.a_log = store.add(prefix + ".a_log", {channels, state_size}, Init::s4d_real_a_log());
    head.x_proj = store.add(prefix + ".x_proj.weight",
                            {channels, head.dt_rank + 2 * state_size}, Init::scaled_uniform());
    head.dt_proj =
        store.add(prefix + ".dt_proj.weight", {head.dt_rank, channels}, Init::scaled_uniform());
    head.dt_bias = store.add(prefix + ".dt_proj.bias", {channels}, Init::softplus_inv_dt(0.01, 0.1));
    if (use_skip) head.d_skip = store.add(prefix + ".d_skip", {channels}, Init::ones());
    return head;
}

Tensor S6Head::forward(const Tensor& u) const {
    check(u.rank() == 3, "S6Head: input must be [B,L,D]");
    check(u.dim(2) == a_log.dim(0), "S6Head: channel mismatch, input has " +
                                        std::to_string(u.dim(2)) + " channels, head expects " +
                                        std::to_string(a_log.dim(0)));
    Tensor xdbl = matmul(u, x_proj);  // [B,L,R+2N]
    auto parts = split(xdbl, {dt_rank, state_size, state_size}, 2);
    Tensor delta = softplus(add(matmul(parts[0], dt_proj), dt_bias));  // [B,L,D], > 0
    Tensor a = neg(exp(a_log));
    return selective_scan(u, delta, a, parts[1], parts[2], d_skip);
}

}  // namespace ainet
