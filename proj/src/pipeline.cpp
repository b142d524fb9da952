#include "ainet/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace ainet {

using nlohmann::json;

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "baseline_add") return FusionMode::BaselineAdd;
    if (s == "dfm_only") return FusionMode::DfmOnly;
    if (s == "ofm_only") return FusionMode::OfmOnly;
    if (s == "dfm_ofm") return FusionMode::DfmOfm;
    fail("unknown fusion_mode '" + s +
         "' (expected baseline_add | dfm_only | ofm_only | dfm_ofm)");
}

std::string to_string(FusionMode m) {
    switch (m) {
        case FusionMode::BaselineAdd: return "baseline_add";
        case FusionMode::DfmOnly: return "dfm_only";
        case FusionMode::OfmOnly: return "ofm_only";
        case FusionMode::DfmOfm: return "dfm_ofm";
    }
    return "?";
}

void PipelineConfig::validate() const {
    check(num_layers > 0 && channels > 0, "config: num_layers and channels must be positive");
    check(patch > 0, "config: patch must be positive");
    check(search_size % patch == 0,
          "config: search_size " + std::to_string(search_size) + " not divisible by patch " +
              std::to_string(patch));
    check(template_size % patch == 0,
          "config: template_size " + std::to_string(template_size) + " not divisible by patch " +
              std::to_string(patch));
    check(steps >= 1 && batch_size >= 1, "config: steps and batch_size must be >= 1");
}

PipelineConfig parse_config_json(const std::string& json_text) {
    json j = json::parse(json_text);
    check(j.is_object(), "config: top level must be a JSON object");
    PipelineConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "num_layers") cfg.num_layers = value.get<int64_t>();
        else if (key == "channels") cfg.channels = value.get<int64_t>();
        else if (key == "search_size") cfg.search_size = value.get<int64_t>();
        else if (key == "template_size") cfg.template_size = value.get<int64_t>();
        else if (key == "patch") cfg.patch = value.get<int64_t>();
        else if (key == "fusion_mode") cfg.fusion_mode = fusion_mode_from_string(value.get<std::string>());
        else if (key == "seed") cfg.seed = value.get<uint64_t>();
        else if (key == "steps") cfg.steps = value.get<int64_t>();
        else if (key == "lr") cfg.lr = value.get<double>();
        else if (key == "batch_size") cfg.batch_size = value.get<int64_t>();
        else if (key == "eval_every") cfg.eval_every = value.get<int64_t>();
        else if (key == "train_sequences") cfg.train_sequences = value.get<int64_t>();
        else if (key == "test_sequences") cfg.test_sequences = value.get<int64_t>();
        else if (key == "frames_per_sequence") cfg.frames_per_sequence = value.get<int64_t>();
        else fail("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::string config_to_json(const PipelineConfig& cfg) {
    json j;
    j["num_layers"] = cfg.num_layers;
    j["channels"] = cfg.channels;
    j["search_size"] = cfg.search_size;
    j["template_size"] = cfg.template_size;
    j["patch"] = cfg.patch;
    j["fusion_mode"] = to_string(cfg.fusion_mode);
    j["seed"] = cfg.seed;
    j["steps"] = cfg.steps;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["eval_every"] = cfg.eval_every;
    j["train_sequences"] = cfg.train_sequences;
    j["test_sequences"] = cfg.test_sequences;
    j["frames_per_sequence"] = cfg.frames_per_sequence;
    return j.dump(2);
}

double iou(const BBox& a, const BBox& b) {
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
    const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::RgbClear: return "rgb_clear";
        case Regime::TirClear: return "tir_clear";
        case Regime::Both: return "both";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

static bool mode_has_dfm(FusionMode m) {
    return m == FusionMode::DfmOnly || m == FusionMode::DfmOfm;
}
static bool mode_has_ofm(FusionMode m) {
    return m == FusionMode::OfmOnly || m == FusionMode::DfmOfm;
}

AinetModel::AinetModel(const PipelineConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int64_t C = cfg.channels;
    const int64_t P = cfg.patch * cfg.patch;

    embed_w_ = store_.add("embed.weight", {P, C}, Init::scaled_uniform());
    embed_b_ = store_.add("embed.bias", {C}, Init::zeros());
    pos_search_ = store_.add("embed.pos_search", {cfg.search_tokens(), C}, Init::normal(0, 0.02));
    pos_template_ =
        store_.add("embed.pos_template", {cfg.template_tokens(), C}, Init::normal(0, 0.02));

    for (int64_t i = 0; i < cfg.num_layers; ++i) {
        const std::string p = "block." + std::to_string(i);
        Block b;
        b.ln1_g = store_.add(p + ".ln1.gamma", {C}, Init::ones());
        b.ln1_b = store_.add(p + ".ln1.beta", {C}, Init::zeros());
        b.wq = store_.add(p + ".attn.q.weight", {C, C}, Init::scaled_uniform());
        b.bq = store_.add(p + ".attn.q.bias", {C}, Init::zeros());
        b.wk = store_.add(p + ".attn.k.weight", {C, C}, Init::scaled_uniform());
        b.bk = store_.add(p + ".attn.k.bias", {C}, Init::zeros());
        b.wv = store_.add(p + ".attn.v.weight", {C, C}, Init::scaled_uniform());
        b.bv = store_.add(p + ".attn.v.bias", {C}, Init::zeros());
        b.wo = store_.add(p + ".attn.o.weight", {C, C}, Init::scaled_uniform());
        b.bo = store_.add(p + ".attn.o.bias", {C}, Init::zeros());
        b.ln2_g = store_.add(p + ".ln2.gamma", {C}, Init::ones());
        b.ln2_b = store_.add(p + ".ln2.beta", {C}, Init::zeros());
        b.w1 = store_.add(p + ".mlp.fc1.weight", {C, 2 * C}, Init::scaled_uniform());
        b.b1 = store_.add(p + ".mlp.fc1.bias", {2 * C}, Init::zeros());
        b.w2 = store_.add(p + ".mlp.fc2.weight", {2 * C, C}, Init::scaled_uniform());
        b.b2 = store_.add(p + ".mlp.fc2.bias", {C}, Init::zeros());
        blocks_.push_back(std::move(b));
    }

    if (mode_has_dfm(cfg.fusion_mode)) {
        DfmConfig dc;
        dc.channels = C;
        dc.mamba.model_dim = C;
        for (int64_t i = 0; i < cfg.num_layers; ++i)
            dfm_.push_back(std::make_unique<Dfm>(store_, "dfm." + std::to_string(i), dc));
    }
    if (mode_has_ofm(cfg.fusion_mode)) {
        OfmConfig oc;
        oc.channels = C;
        oc.num_layers = cfg.num_layers;
        oc.tokens_per_layer = cfg.tokens_per_layer();
        ofm_ = std::make_unique<Ofm>(store_, "ofm", oc);
    }

    head_ln_g_ = store_.add("head.ln.gamma", {C}, Init::ones());
    head_ln_b_ = store_.add("head.ln.beta", {C}, Init::zeros());
    score_w_ = store_.add("head.score.weight", {C, 1}, Init::scaled_uniform());
    score_b_ = store_.add("head.score.bias", {1}, Init::zeros());
    size_w1_ = store_.add("head.size.fc1.weight", {C, C}, Init::scaled_uniform());
    size_b1_ = store_.add("head.size.fc1.bias", {C}, Init::zeros());
    size_w2_ = store_.add("head.size.fc2.weight", {C, 2}, Init::scaled_uniform());
    size_b2_ = store_.add("head.size.fc2.bias", {2}, Init::zeros());

    store_.init_all(cfg.seed);
}

int64_t AinetModel::param_count(const PipelineConfig& cfg) {
    const int64_t C = cfg.channels;
    const int64_t P = cfg.patch * cfg.patch;
    int64_t n = P * C + C + cfg.search_tokens() * C + cfg.template_tokens() * C;
    // per block: 2 LN pairs + 4 attn linears + MLP
    n += cfg.num_layers * (4 * C + 4 * (C * C + C) + (C * 2 * C + 2 * C) + (2 * C * C + C));
    if (mode_has_dfm(cfg.fusion_mode)) {
        DfmConfig dc;
        dc.channels = C;
        dc.mamba.model_dim = C;
        n += cfg.num_layers * Dfm::param_count(dc);
    }
    if (mode_has_ofm(cfg.fusion_mode)) {
        OfmConfig oc;
        oc.channels = C;
        oc.num_layers = cfg.num_layers;
        oc.tokens_per_layer = cfg.tokens_per_layer();
        n += Ofm::param_count(oc);
    }
    n += 2 * C;                    // head LN
    n += C + 1;                    // score
    n += C * C + C + C * 2 + 2;    // size MLP
    return n;
}

// frame [size*size] -> patch rows [(size/patch)^2, patch*patch]
static std::vector<double> extract_patches(const std::vector<double>& frame, int64_t size,
                                           int64_t patch) {
    const int64_t g = size / patch;
    std::vector<double> rows(static_cast<size_t>(g * g * patch * patch));
    for (int64_t pr = 0; pr < g; ++pr)
        for (int64_t pc = 0; pc < g; ++pc) {
            double* dst = rows.data() + (pr * g + pc) * patch * patch;
            for (int64_t y = 0; y < patch; ++y)
                for (int64_t x = 0; x < patch; ++x)
                    dst[y * patch + x] =
                        frame[static_cast<size_t>((pr * patch + y) * size + pc * patch + x)];
        }
    return rows;
}

Tensor AinetModel::patch_tokens(const std::vector<double>& frame, int64_t size) const {
    check(size % cfg_.patch == 0, "patch_tokens: frame size " + std::to_string(size) +
                                      " not divisible by patch " + std::to_string(cfg_.patch));
    check(static_cast<int64_t>(frame.size()) == size * size, "patch_tokens: frame length mismatch");
    const int64_t g = size / cfg_.patch;
    Tensor rows = Tensor::from_vector({g * g, cfg_.patch * cfg_.patch},
                                      extract_patches(frame, size, cfg_.patch));
    return linear(rows, embed_w_, embed_b_);
}

Tensor AinetModel::embed_modality(const std::vector<const TrackSample*>& batch, bool tir) const {
    const int64_t B = static_cast<int64_t>(batch.size());
    const int64_t P = cfg_.patch * cfg_.patch;
    const int64_t Ls = cfg_.search_tokens(), Lt = cfg_.template_tokens();

    std::vector<double> srows(static_cast<size_t>(B * Ls * P));
    std::vector<double> trows(static_cast<size_t>(B * Lt * P));
    for (int64_t b = 0; b < B; ++b) {
        const auto& s = *batch[static_cast<size_t>(b)];
        auto sp = extract_patches(tir ? s.tir_frame : s.rgb_frame, cfg_.search_size, cfg_.patch);
        auto tp = extract_patches(tir ? s.tir_template : s.rgb_template, cfg_.template_size,
                                  cfg_.patch);
        std::copy(sp.begin(), sp.end(), srows.begin() + b * Ls * P);
        std::copy(tp.begin(), tp.end(), trows.begin() + b * Lt * P);
    }
    Tensor st = linear(Tensor::from_vector({B, Ls, P}, std::move(srows)), embed_w_, embed_b_);
    Tensor tt = linear(Tensor::from_vector({B, Lt, P}, std::move(trows)), embed_w_, embed_b_);
    st = add(st, pos_search_);
    tt = add(tt, pos_template_);
    return concat({st, tt}, 1);  // search tokens first, then template tokens
}

Tensor AinetModel::backbone_block(int layer, const Tensor& x) const {
    const auto& b = blocks_[static_cast<size_t>(layer)];
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(cfg_.channels));
    Tensor y = layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor q = linear(y, b.wq, b.bq);
    Tensor k = linear(y, b.wk, b.bk);
    Tensor v = linear(y, b.wv, b.bv);
    Tensor scores = scale(matmul(q, transpose_last(k)), inv_sqrt_c);
    Tensor attn = softmax(scores);
    Tensor ctx = linear(matmul(attn, v), b.wo, b.bo);
    Tensor a = add(x, ctx);
    Tensor m = layer_norm(a, b.ln2_g, b.ln2_b);
    Tensor h = silu(linear(m, b.w1, b.b1));
    return add(a, linear(h, b.w2, b.b2));
}

int64_t AinetModel::gt_cell(const BBox& box) const {
    const int64_t g = cfg_.search_size / cfg_.patch;
    int64_t col = static_cast<int64_t>(box.cx / static_cast<double>(cfg_.patch));
    int64_t row = static_cast<int64_t>(box.cy / static_cast<double>(cfg_.patch));
    col = std::clamp<int64_t>(col, 0, g - 1);
    row = std::clamp<int64_t>(row, 0, g - 1);
    return row * g + col;
}

BBox Prediction::decode(const PipelineConfig& cfg, int64_t b) const {
    const int64_t g = cfg.search_size / cfg.patch;
    const int64_t cell = cells[static_cast<size_t>(b)];
    BBox box;
    box.cx = (static_cast<double>(cell % g) + 0.5) * static_cast<double>(cfg.patch);
    box.cy = (static_cast<double>(cell / g) + 0.5) * static_cast<double>(cfg.patch);
    box.w = box_wh.at({b, 0});
    box.h = box_wh.at({b, 1});
    return box;
}

Prediction AinetModel::forward(const std::vector<const TrackSample*>& batch,
                               const std::vector<int64_t>* train_cells,
                               ForwardTrace* trace) const {
    check(!batch.empty(), "forward: empty batch");
    Tensor x_rgb = embed_modality(batch, false);
    Tensor x_tir = embed_modality(batch, true);
    const bool has_dfm = mode_has_dfm(cfg_.fusion_mode);
    const bool has_ofm = mode_has_ofm(cfg_.fusion_mode);

    LayerStack stack;
    for (int64_t i = 0; i < cfg_.num_layers; ++i) {
        if (trace) trace->block_inputs.emplace_back(x_rgb, x_tir);
        // shared weights: the same block processes both modality streams
        x_rgb = backbone_block(static_cast<int>(i), x_rgb);
        x_tir = backbone_block(static_cast<int>(i), x_tir);
        if (has_dfm) {
            auto out = dfm_[static_cast<size_t>(i)]->forward(x_rgb, x_tir);
            x_rgb = out.x_rgb_hat;  // enhanced features re-enter the backbone
            x_tir = out.x_tir_hat;
            if (trace) {
                trace->dfm_enhanced.emplace_back(x_rgb, x_tir);
                trace->dfm_fused.push_back(out.x_dfm);
            }
            stack.layers.push_back(out.x_dfm);
        } else if (has_ofm) {
            stack.layers.push_back(add(x_rgb, x_tir));  // simple per-layer fusion
        }
        if (trace && (has_dfm || has_ofm)) trace->fusion_stack.push_back(stack.layers.back());
    }

    Tensor fused;
    if (has_ofm) {
        Tensor f_all = stack.concatenated();
        if (trace) trace->ofm_input_tokens = f_all.dim(1);
        fused = ofm_->forward(stack);
    } else {
        // without OFM the head keeps the baseline form: last-layer elementwise
        // addition of the two streams (DFM-enhanced when DFM is present)
        fused = add(x_rgb, x_tir);
    }

    Tensor hf = layer_norm(fused, head_ln_g_, head_ln_b_);
    Tensor search = slice_tokens(hf, 0, cfg_.search_tokens());
    const int64_t B = search.dim(0), Ls = cfg_.search_tokens();
    Tensor logits = reshape(linear(search, score_w_, score_b_), {B, Ls});
    Prediction pred;
    pred.heatmap = softmax(logits);

    if (train_cells) {
        check(static_cast<int64_t>(train_cells->size()) == B, "forward: train_cells size mismatch");
        pred.cells = *train_cells;
    } else {
        pred.cells.resize(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            const double* row = pred.heatmap.ptr() + b * Ls;
            pred.cells[static_cast<size_t>(b)] =
                static_cast<int64_t>(std::max_element(row, row + Ls) - row);
        }
    }

    Tensor feat = gather_rows(search, pred.cells);  // [B,C]
    Tensor hidden = silu(linear(feat, size_w1_, size_b1_));
    Tensor unit = sigmoid(linear(hidden, size_w2_, size_b2_));  // (0,1)
    pred.box_wh = scale(unit, static_cast<double>(cfg_.search_size));
    return pred;
}

}  // namespace ainet
