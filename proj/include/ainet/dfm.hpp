#pragma once

#include "ainet/mamba.hpp"

namespace ainet {

struct DfmConfig {
    int64_t channels = 0;
    MambaBlockConfig mamba;  // model_dim filled from channels when zero
    // Fuse the enhanced features (default). When false, fuse the raw inputs
    // instead; kept switchable so both readings stay testable.
    bool fuse_enhanced = true;
};

// Difference-based fusion: gates each modality by tanh(Mamba(x_rgb - x_tir)),
// cross-multiplied so each stream is compensated by the other, then fuses via
// channel concat -> [2C,C] linear -> layer norm -> tanh.
class Dfm {
public:
    Dfm(ParamStore& store, const std::string& prefix, DfmConfig cfg);

    struct Output {
        Tensor x_rgb_hat;  // [B,L,C]
        Tensor x_tir_hat;  // [B,L,C]
        Tensor x_dfm;      // [B,L,C], values in (-1,1)
    };

    // g = tanh(Mamba(x_rgb - x_tir)), elementwise in (-1,1)
    Tensor difference_gate(const Tensor& x_rgb, const Tensor& x_tir) const;

    // rgb_hat = rgb + tir*g ; tir_hat = tir + rgb*g (shared gate, cross terms)
    static std::pair<Tensor, Tensor> enhance(const Tensor& x_rgb, const Tensor& x_tir,
                                             const Tensor& g);

    // tanh(LN(concat(a,b) . W)), W [2C,C]
    Tensor fuse(const Tensor& a, const Tensor& b) const;

    Output forward(const Tensor& x_rgb, const Tensor& x_tir) const;

    const MambaBlock& mamba() const { return *mamba_; }
    const DfmConfig& config() const { return cfg_; }

    static int64_t param_count(const DfmConfig& cfg);

private:
    DfmConfig cfg_;
    std::unique_ptr<MambaBlock> mamba_;
    Tensor fuse_w_;              // [2C,C]
    Tensor ln_gamma_, ln_beta_;  // [C]
};

}  // namespace ainet
