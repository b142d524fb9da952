#pragma once

#include "ainet/ssm.hpp"

namespace ainet {

struct MambaBlockConfig {
    int64_t model_dim = 0;   // C
    int64_t expand = 2;      // E, inner dim = E*C
    int64_t state_size = 16; // N
    int64_t conv_width = 4;  // K
    bool use_skip = true;

    int64_t inner_dim() const { return expand * model_dim; }
    int64_t dt_rank() const { return dt_rank_for(model_dim); }
};

// Closed-form parameter count:
//   in_proj   C*2EC + 2EC
//   conv      EC*K + EC
//   x_proj    EC*(R + 2N)
//   dt_proj   R*EC + EC
//   a_log     EC*N
//   d_skip    EC            (when use_skip)
//   out_proj  EC*C + C
// with EC = E*C and R = max(1, ceil(C/16)).
int64_t mamba_param_count(const MambaBlockConfig& cfg);

// projection -> causal depthwise 1-D conv -> SiLU -> selective scan ->
// multiplicative SiLU gate -> output projection. Shape preserving and causal.
class MambaBlock {
public:
    MambaBlock(ParamStore& store, const std::string& prefix, MambaBlockConfig cfg);

    Tensor forward(const Tensor& x) const;  // [B,L,C] -> [B,L,C]

    const MambaBlockConfig& config() const { return cfg_; }

private:
    MambaBlockConfig cfg_;
    Tensor in_w_, in_b_;      // [C,2EC], [2EC]
    Tensor conv_w_, conv_b_;  // [EC,K], [EC]
    Tensor out_w_, out_b_;    // [EC,C], [C]
    S6Head s6_;
};

}  // namespace ainet
