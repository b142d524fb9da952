#pragma once

#include "ainet/params.hpp"
#include "ainet/tensor.hpp"

namespace ainet {

// State-space parameters. diag(A) = -exp(a_log) per channel keeps the
// continuous system strictly stable; delta > 0 is the step size.
// LTI mode: b,c are [N] shared across channels and delta is a scalar [1].
// Selective mode stores per-step projections instead (see S6Head below).
struct SsmParams {
    Tensor a_log;   // [D,N]
    Tensor b;       // [N]
    Tensor c;       // [N]
    Tensor delta;   // [1], > 0
    Tensor d_skip;  // [D] residual skip, undefined to disable

    int64_t channels() const { return a_log.dim(0); }
    int64_t state_size() const { return a_log.dim(1); }
    bool lti() const { return b.rank() == 1 && c.rank() == 1 && delta.numel() == 1; }
};

struct DiscretizedSsm {
    Tensor a_bar;  // [D,N], |a_bar| < 1 for delta > 0
    Tensor b_bar;  // [D,N]
};

// Zero-order hold: a_bar = exp(delta*A), b_bar = delta*phi1(delta*A)*B, which
// equals (delta*A)^-1 (exp(delta*A) - I) delta*B with the delta*B limit taken
// for |delta*A| < 1e-8. Differentiable in a_log, b and delta.
DiscretizedSsm discretize_zoh(const SsmParams& params, const Tensor& delta);
// convenience form reading the step size stored on the parameters
DiscretizedSsm discretize_zoh(const SsmParams& params);

// Exact left-to-right recurrence h_t = a_bar h_{t-1} + b_bar x_t,
// y_t = sum_n c_n h_t[n] (+ d_skip x_t). x is [B,L,D]. Verification path;
// forward values only, no gradient graph.
Tensor recurrent_scan(const DiscretizedSsm& d, const Tensor& c, const Tensor& x,
                      const Tensor& d_skip);

// Structured kernel K[d][j] = c . (a_bar^j * b_bar) for the LTI case only.
Tensor conv_kernel(const DiscretizedSsm& d, const Tensor& c, int64_t len);
// Causal convolution y[b,t,d] = sum_{j<=t} K[d,j] x[b,t-j,d] (+ d_skip x).
Tensor conv_scan(const Tensor& kernel, const Tensor& x, const Tensor& d_skip);

// Guard used by conv_kernel-style entry points: selective (per-step) B/C have
// no kernel form.
void require_lti(const SsmParams& params);

inline int64_t dt_rank_for(int64_t model_dim) { return std::max<int64_t>(1, (model_dim + 15) / 16); }

// Input-dependent scan head: per-step delta, B, C are linear projections of
// the input token (S6). Shared by the Mamba block and the OFM branches.
struct S6Head {
    Tensor a_log;    // [D,N]
    Tensor x_proj;   // [D, R+2N], no bias
    Tensor dt_proj;  // [R, D]
    Tensor dt_bias;  // [D]
    Tensor d_skip;   // [D] or undefined
    int64_t state_size = 0;
    int64_t dt_rank = 0;

    // dt_rank follows the block's model dim, not the head's channel count
    static S6Head create(ParamStore& store, const std::string& prefix, int64_t channels,
                         int64_t state_size, int64_t dt_rank, bool use_skip);

    // u [B,L,D] -> y [B,L,D]
    Tensor forward(const Tensor& u) const;
};

}  // namespace ainet
