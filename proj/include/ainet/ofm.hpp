#pragma once

#include "ainet/ssm.hpp"

namespace ainet {

// Ordered per-layer fused token sequences; all layers share [B,L,C].
struct LayerStack {
    std::vector<Tensor> layers;

    int64_t num_layers() const { return static_cast<int64_t>(layers.size()); }
    // [B, N*L, C] concatenation along the token axis, ascending layer order.
    Tensor concatenated() const;
    void validate() const;
};

// Permutation of layer indices per batch element, from the order predictor.
struct ScanOrder {
    std::vector<std::vector<int64_t>> index;  // index[b] is a permutation of 0..N-1

    bool valid(int64_t num_layers) const;
    ScanOrder inverse() const;
    static ScanOrder identity(int64_t batch, int64_t num_layers);
    static ScanOrder reversal(int64_t batch, int64_t num_layers);
};

enum class ScanDirection { Forward, Backward };

struct OfmConfig {
    int64_t channels = 0;          // C
    int64_t num_layers = 0;        // N
    int64_t tokens_per_layer = 0;  // L
    int64_t state_size = 16;
    int64_t conv_width = 4;
    bool use_skip = true;
    // One scan parameter set + one conv shared by all three branches.
    bool share_branch_params = true;
    // Straight-through conduit routing value gradients to the order logits;
    // forward values are unchanged. Off by default: gradients flow through
    // scanned values only and the predictor stays fixed.
    bool straight_through = false;

    int64_t total_tokens() const { return num_layers * tokens_per_layer; }
};

// Order-dynamic fusion: scans the all-layer token sequence forward, backward
// and in a predicted layer order, gates each branch with SiLU(F.Wz), sums,
// projects, then aggregates the N layer chunks by elementwise addition.
class Ofm {
public:
    Ofm(ParamStore& store, const std::string& prefix, OfmConfig cfg);

    // stack of N tensors [B,L,C] -> [B,L,C]
    Tensor forward(const LayerStack& stack) const;

    // Branch and predictor pieces, exposed for verification:
    // forward: scan in canonical order; backward: scan layers N..1, output
    // restored to canonical order so branches are addable positionwise.
    Tensor scan_branch(const Tensor& f_all, ScanDirection dir) const;
    ScanOrder predict_scan_order(const Tensor& f_all) const;
    // logits [B,N] before the argsort (exposed for the hand-set-weights test)
    Tensor order_logits(const Tensor& f_all) const;
    // scan in the given order, output restored to canonical order
    Tensor dynamic_branch(const Tensor& f_all, const ScanOrder& order) const;

    const OfmConfig& config() const { return cfg_; }
    static int64_t param_count(const OfmConfig& cfg);

private:
    Tensor branch_core(const Tensor& f, int branch) const;  // conv -> silu -> S6
    int branch_param_set(int branch) const { return cfg_.share_branch_params ? 0 : branch; }

    OfmConfig cfg_;
    struct BranchParams {
        Tensor conv_w, conv_b;  // [C,K], [C]
        S6Head s6;
    };
    std::vector<BranchParams> branches_;  // 1 when shared, else 3
    Tensor gate_w_, gate_b_;              // [C,C], [C]
    Tensor out_w_, out_b_;                // [C,C], [C]
    Tensor mlp_w_, mlp_b_;                // [C,C], [C]
    Tensor fc_w_, fc_b_;                  // [C,1], [1]
};

}  // namespace ainet
