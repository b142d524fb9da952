#include "ainet/mamba.hpp"

#include <cmath>

namespace ainet {

int64_t mamba_param_count(const MambaBlockConfig& cfg) {
    const int64_t C = cfg.model_dim;
    const int64_t EC = cfg.inner_dim();
    const int64_t N = cfg.state_size;
    const int64_t K = cfg.conv_width;
    const int64_t R = cfg.dt_rank();
    int64_t n = 0;
    n += C * 2 * EC + 2 * EC;  // in_proj
    n += EC * K + EC;          // conv
    n += EC * (R + 2 * N);     // x_proj
    n += R * EC + EC;          // dt_proj
    n += EC * N;               // a_log
    if (cfg.use_skip) n += EC;
    n += EC * C + C;           // out_proj
    return n;
}

MambaBlock::MambaBlock(ParamStore& store, const std::string& prefix, MambaBlockConfig cfg)
    : cfg_(cfg) {
    check(cfg.model_dim > 0 && cfg.expand > 0 && cfg.state_size > 0 && cfg.conv_width > 0,
          "MambaBlock: all config dimensions must be positive");
    const int64_t C = cfg.model_dim;
    const int64_t EC = cfg.inner_dim();
    in_w_ = store.add(prefix + ".in_proj.weight", {C, 2 * EC}, Init::scaled_uniform());
    in_b_ = store.add(prefix + ".in_proj.bias", {2 * EC}, Init::zeros());
    const double cb = 1.0 / std::sqrt(static_cast<double>(cfg.conv_width));
    conv_w_ = store.add(prefix + ".conv1d.weight", {EC, cfg.conv_width}, Init::uniform(-cb, cb));
    conv_b_ = store.add(prefix + ".conv1d.bias", {EC}, Init::zeros());
    s6_ = S6Head::create(store, prefix + ".s6", EC, cfg.state_size, cfg.dt_rank(), cfg.use_skip);
    out_w_ = store.add(prefix + ".out_proj.weight", {EC, C}, Init::scaled_uniform());
    out_b_ = store.add(prefix + ".out_proj.bias", {C}, Init::zeros());
}

Tensor MambaBlock::forward(const Tensor& x) const {
    check(x.rank() == 3, "MambaBlock: input must be [B,L,C]");
    check(x.dim(2) == cfg_.model_dim, "MambaBlock: expected " + std::to_string(cfg_.model_dim) +
                                          " channels, input is " + shape_str(x.shape()));
    const int64_t EC = cfg_.inner_dim();
    Tensor xz = linear(x, in_w_, in_b_);  // [B,L,2EC]
    auto uz = split(xz, {EC, EC}, 2);
    Tensor u = silu(causal_dwconv1d(uz[0], conv_w_, conv_b_));
    Tensor y = s6_.forward(u);
    y = mul(y, silu(uz[1]));
    return linear(y, out_w_, out_b_);
}

}  // namespace ainet
