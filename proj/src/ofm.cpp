#include "ainet/ofm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ainet {

void LayerStack::validate() const {
    check(!layers.empty(), "LayerStack: needs at least one layer");
    for (const auto& t : layers) {
        check(t.defined() && t.rank() == 3, "LayerStack: layers must be [B,L,C]");
        check(t.shape() == layers[0].shape(),
              "LayerStack: all layers must share shape, got " + shape_str(t.shape()) + " vs " +
                  shape_str(layers[0].shape()));
    }
}

Tensor LayerStack::concatenated() const {
    validate();
    if (layers.size() == 1) return layers[0];
    return concat(layers, 1);
}

bool ScanOrder::valid(int64_t num_layers) const {
    for (const auto& ord : index) {
        if (static_cast<int64_t>(ord.size()) != num_layers) return false;
        std::vector<bool> seen(static_cast<size_t>(num_layers), false);
        for (int64_t v : ord) {
            if (v < 0 || v >= num_layers || seen[static_cast<size_t>(v)]) return false;
            seen[static_cast<size_t>(v)] = true;
        }
    }
    return true;
}

ScanOrder ScanOrder::inverse() const {
    ScanOrder inv;
    inv.index.resize(index.size());
    for (size_t b = 0; b < index.size(); ++b) {
        inv.index[b].assign(index[b].size(), 0);
        for (size_t j = 0; j < index[b].size(); ++j)
            inv.index[b][static_cast<size_t>(index[b][j])] = static_cast<int64_t>(j);
    }
    return inv;
}

ScanOrder ScanOrder::identity(int64_t batch, int64_t num_layers) {
    ScanOrder o;
    o.index.assign(static_cast<size_t>(batch), std::vector<int64_t>(static_cast<size_t>(num_layers)));
    for (auto& ord : o.index) std::iota(ord.begin(), ord.end(), 0);
    return o;
}

ScanOrder ScanOrder::reversal(int64_t batch, int64_t num_layers) {
    ScanOrder o = identity(batch, num_layers);
    for (auto& ord : o.index) std::reverse(ord.begin(), ord.end());
    return o;
}

int64_t Ofm::param_count(const OfmConfig& cfg) {
    const int64_t C = cfg.channels;
    const int64_t R = dt_rank_for(C);
    int64_t branch = C * cfg.conv_width + C          // conv
                     + C * (R + 2 * cfg.state_size)  // x_proj
                     + R * C + C                     // dt_proj
                     + C * cfg.state_size            // a_log
                     + (cfg.use_skip ? C : 0);
    const int64_t sets = cfg.share_branch_params ? 1 : 3;
    return sets * branch + (C * C + C) * 2  // gate + out
           + (C * C + C)                    // predictor MLP
           + (C + 1);                       // predictor FC
}

Ofm::Ofm(ParamStore& store, const std::string& prefix, OfmConfig cfg) : cfg_(cfg) {
    check(cfg.channels > 0 && cfg.num_layers > 0 && cfg.tokens_per_layer > 0,
          "Ofm: channels, num_layers, tokens_per_layer must be positive");
    const int64_t C = cfg.channels;
    const int sets = cfg.share_branch_params ? 1 : 3;
    static const char* kSetName[3] = {"forward", "backward", "dynamic"};
    const double cb = 1.0 / std::sqrt(static_cast<double>(cfg.conv_width));
    for (int s = 0; s < sets; ++s) {
        const std::string bp =
            prefix + ".branch" + (cfg.share_branch_params ? "" : std::string(".") + kSetName[s]);
        BranchParams b;
        b.conv_w = store.add(bp + ".conv1d.weight", {C, cfg.conv_width}, Init::uniform(-cb, cb));
        b.conv_b = store.add(bp + ".conv1d.bias", {C}, Init::zeros());
        b.s6 = S6Head::create(store, bp + ".s6", C, cfg.state_size, dt_rank_for(C), cfg.use_skip);
        branches_.push_back(std::move(b));
    }
    gate_w_ = store.add(prefix + ".gate.weight", {C, C}, Init::scaled_uniform());
    gate_b_ = store.add(prefix + ".gate.bias", {C}, Init::zeros());
    out_w_ = store.add(prefix + ".out_proj.weight", {C, C}, Init::scaled_uniform());
    out_b_ = store.add(prefix + ".out_proj.bias", {C}, Init::zeros());
    mlp_w_ = store.add(prefix + ".order.mlp.weight", {C, C}, Init::scaled_uniform());
    mlp_b_ = store.add(prefix + ".order.mlp.bias", {C}, Init::zeros());
    fc_w_ = store.add(prefix + ".order.fc.weight", {C, 1}, Init::scaled_uniform());
    fc_b_ = store.add(prefix + ".order.fc.bias", {1}, Init::zeros());
}

Tensor Ofm::branch_core(const Tensor& f, int branch) const {
    const auto& p = branches_[static_cast<size_t>(branch_param_set(branch))];
    Tensor u = silu(causal_dwconv1d(f, p.conv_w, p.conv_b));
    return p.s6.forward(u);
}

static void check_tokens(const OfmConfig& cfg, const Tensor& f_all) {
    check(f_all.rank() == 3, "Ofm: input must be [B, N*L, C]");
    check(f_all.dim(1) == cfg.total_tokens(),
          "Ofm: token count " + std::to_string(f_all.dim(1)) + " is not num_layers*tokens = " +
              std::to_string(cfg.num_layers) + "*" + std::to_string(cfg.tokens_per_layer));
    check(f_all.dim(2) == cfg.channels, "Ofm: channel mismatch");
}

Tensor Ofm::scan_branch(const Tensor& f_all, ScanDirection dir) const {
    check_tokens(cfg_, f_all);
    if (dir == ScanDirection::Forward) return branch_core(f_all, 0);
    // reversal is self-inverse: reorder, scan, restore canonical layer order
    ScanOrder rev = ScanOrder::reversal(f_all.dim(0), cfg_.num_layers);
    Tensor scanned = branch_core(reorder_blocks(f_all, rev.index, cfg_.tokens_per_layer), 1);
    return reorder_blocks(scanned, rev.index, cfg_.tokens_per_layer);
}

Tensor Ofm::order_logits(const Tensor& f_all) const {
    check_tokens(cfg_, f_all);
    const int64_t B = f_all.dim(0);
    Tensor grouped =
        reshape(f_all, {B, cfg_.num_layers, cfg_.tokens_per_layer, cfg_.channels});
    Tensor pooled = mean(grouped, 2);  // [B,N,C], per-layer token mean
    Tensor h = silu(linear(pooled, mlp_w_, mlp_b_));
    Tensor logits = linear(h, fc_w_, fc_b_);  // [B,N,1]
    return reshape(logits, {B, cfg_.num_layers});
}

ScanOrder Ofm::predict_scan_order(const Tensor& f_all) const {
    autograd::NoGradGuard ng;  // the discrete order never carries gradients
    Tensor logits = order_logits(f_all.detach());
    const int64_t B = logits.dim(0), N = logits.dim(1);
    ScanOrder order;
    order.index.resize(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        auto& ord = order.index[static_cast<size_t>(b)];
        ord.resize(static_cast<size_t>(N));
        std::iota(ord.begin(), ord.end(), 0);
        const double* lg = logits.ptr() + b * N;
        // descending logits; stable sort keeps ascending layer id on ties
        std::stable_sort(ord.begin(), ord.end(),
                         [lg](int64_t i, int64_t j) { return lg[i] > lg[j]; });
    }
    return order;
}

Tensor Ofm::dynamic_branch(const Tensor& f_all, const ScanOrder& order) const {
    check_tokens(cfg_, f_all);
    check(order.valid(cfg_.num_layers), "Ofm: scan order is not a valid permutation");
    Tensor input = f_all;
    if (cfg_.straight_through) {
        // value-preserving conduit: block i scaled by 1 + (logit_i - stop(logit_i)),
        // a multiplier that is exactly 1 in the forward pass but routes the
        // dynamic branch's value gradients into the order logits
        const int64_t B = f_all.dim(0);
        Tensor logits = order_logits(f_all);
        Tensor conduit = add(Tensor::ones({B, cfg_.num_layers}), sub(logits, logits.detach()));
        Tensor grouped =
            reshape(f_all, {B, cfg_.num_layers, cfg_.tokens_per_layer, cfg_.channels});
        Tensor scaled = mul(grouped, reshape(conduit, {B, cfg_.num_layers, 1, 1}));
        input = reshape(scaled, f_all.shape());
    }
    Tensor permuted = reorder_blocks(input, order.index, cfg_.tokens_per_layer);
    Tensor scanned = branch_core(permuted, 2);
    return reorder_blocks(scanned, order.inverse().index, cfg_.tokens_per_layer);
}

Tensor Ofm::forward(const LayerStack& stack) const {
    check(stack.num_layers() == cfg_.num_layers,
          "Ofm: stack has " + std::to_string(stack.num_layers()) + " layers, config expects " +
              std::to_string(cfg_.num_layers));
    Tensor f_all = stack.concatenated();
    check_tokens(cfg_, f_all);

    // fixed branch order keeps strict mode bitwise reproducible
    Tensor y_fwd = scan_branch(f_all, ScanDirection::Forward);
    Tensor y_bwd = scan_branch(f_all, ScanDirection::Backward);
    Tensor y_dyn = dynamic_branch(f_all, predict_scan_order(f_all));

    Tensor z = silu(linear(f_all, gate_w_, gate_b_));  // shared multiplicative gate
    Tensor fused = add(add(mul(y_fwd, z), mul(y_bwd, z)), mul(y_dyn, z));
    Tensor out = linear(fused, out_w_, out_b_);

    auto chunks = split(out, std::vector<int64_t>(static_cast<size_t>(cfg_.num_layers),
                                                  cfg_.tokens_per_layer), 1);
    Tensor acc = chunks[0];
    for (size_t i = 1; i < chunks.size(); ++i) acc = add(acc, chunks[i]);
    return acc;
}

}  // namespace ainet
