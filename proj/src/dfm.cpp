#include "ainet/dfm.hpp"

namespace ainet {

static void check_pair(const Tensor& x_rgb, const Tensor& x_tir) {
    check(x_rgb.shape() == x_tir.shape(),
          "modality shapes must match exactly, rgb " + shape_str(x_rgb.shape()) + " vs tir " +
              shape_str(x_tir.shape()));
}

int64_t Dfm::param_count(const DfmConfig& cfg) {
    MambaBlockConfig m = cfg.mamba;
    if (m.model_dim == 0) m.model_dim = cfg.channels;
    return mamba_param_count(m) + 2 * cfg.channels * cfg.channels + 2 * cfg.channels;
}

Dfm::Dfm(ParamStore& store, const std::string& prefix, DfmConfig cfg) : cfg_(cfg) {
    check(cfg.channels > 0, "Dfm: channels must be positive");
    if (cfg_.mamba.model_dim == 0) cfg_.mamba.model_dim = cfg.channels;
    check(cfg_.mamba.model_dim == cfg.channels, "Dfm: mamba model_dim must equal channels");
    mamba_ = std::make_unique<MambaBlock>(store, prefix + ".mamba", cfg_.mamba);
    const int64_t C = cfg.channels;
    fuse_w_ = store.add(prefix + ".fuse.weight", {2 * C, C}, Init::scaled_uniform());
    ln_gamma_ = store.add(prefix + ".fuse.ln.gamma", {C}, Init::ones());
    ln_beta_ = store.add(prefix + ".fuse.ln.beta", {C}, Init::zeros());
}

Tensor Dfm::difference_gate(const Tensor& x_rgb, const Tensor& x_tir) const {
    check_pair(x_rgb, x_tir);
    return tanh(mamba_->forward(sub(x_rgb, x_tir)));
}

std::pair<Tensor, Tensor> Dfm::enhance(const Tensor& x_rgb, const Tensor& x_tir,
                                       const Tensor& g) {
    check_pair(x_rgb, x_tir);
    check(g.shape() == x_rgb.shape(), "enhance: gate shape " + shape_str(g.shape()) +
                                          " must match inputs " + shape_str(x_rgb.shape()));
    Tensor rgb_hat = add(x_rgb, mul(x_tir, g));
    Tensor tir_hat = add(x_tir, mul(x_rgb, g));
    return {rgb_hat, tir_hat};
}

Tensor Dfm::fuse(const Tensor& a, const Tensor& b) const {
    check_pair(a, b);
    const int64_t C = cfg_.channels;
    check(fuse_w_.dim(0) == 2 * C && fuse_w_.dim(1) == C,
          "fuse: weight must be [2C,C] = [" + std::to_string(2 * C) + "," + std::to_string(C) +
              "], got " + shape_str(fuse_w_.shape()));
    Tensor cat = concat({a, b}, 2);  // [B,L,2C]
    return tanh(layer_norm(matmul(cat, fuse_w_), ln_gamma_, ln_beta_));
}

Dfm::Output Dfm::forward(const Tensor& x_rgb, const Tensor& x_tir) const {
    Tensor g = difference_gate(x_rgb, x_tir);
    auto [rgb_hat, tir_hat] = enhance(x_rgb, x_tir, g);
    Tensor fused = cfg_.fuse_enhanced ? fuse(rgb_hat, tir_hat) : fuse(x_rgb, x_tir);
    return {rgb_hat, tir_hat, fused};
}

}  // namespace ainet
