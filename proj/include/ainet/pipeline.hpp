#pragma once

#include <array>
#include <iosfwd>
#include <optional>

#include "ainet/dfm.hpp"
#include "ainet/ofm.hpp"

namespace ainet {

enum class FusionMode { BaselineAdd, DfmOnly, OfmOnly, DfmOfm };

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode m);

struct PipelineConfig {
    int64_t num_layers = 4;
    int64_t channels = 32;
    int64_t search_size = 64;
    int64_t template_size = 32;
    int64_t patch = 8;
    FusionMode fusion_mode = FusionMode::DfmOfm;
    uint64_t seed = 0;

    // training schedule (part of the documented config schema)
    int64_t steps = 2000;
    double lr = 3e-3;
    int64_t batch_size = 2;
    int64_t eval_every = 250;
    int64_t train_sequences = 48;
    int64_t test_sequences = 24;
    int64_t frames_per_sequence = 8;

    int64_t search_tokens() const { return (search_size / patch) * (search_size / patch); }
    int64_t template_tokens() const {
        return (template_size / patch) * (template_size / patch);
    }
    int64_t tokens_per_layer() const { return search_tokens() + template_tokens(); }

    void validate() const;
};

// Strict schema: unknown keys are rejected.
PipelineConfig parse_config_json(const std::string& json_text);
std::string config_to_json(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// synthetic two-modality tracking data
// ---------------------------------------------------------------------------

struct BBox {
    double cx = 0, cy = 0, w = 0, h = 0;
};

double iou(const BBox& a, const BBox& b);

enum class Regime { RgbClear, TirClear, Both };

std::string to_string(Regime r);

struct TrackSample {
    std::vector<double> rgb_frame, tir_frame;        // [S*S]
    std::vector<double> rgb_template, tir_template;  // [T*T]
    BBox gt_box;
    Regime regime = Regime::Both;
    int64_t sequence = 0, frame = 0;
};

// Reproducible blob-trajectory sequences. The target has contrast only in the
// regime's visible modalities; each frame also carries one rgb-only and one
// tir-only distractor blob so that fusion quality matters.
std::vector<TrackSample> generate_dataset(uint64_t seed, int64_t n_sequences,
                                          int64_t frames_per_sequence,
                                          const PipelineConfig& geom,
                                          std::array<double, 3> regime_mix = {1.0 / 3, 1.0 / 3,
                                                                              1.0 / 3});

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

// Wiring record for topology assertions: which tensors fed each backbone
// block and which per-layer outputs entered the fusion stage. Handles share
// storage with the live graph, so identity comparisons are exact.
struct ForwardTrace {
    std::vector<std::pair<Tensor, Tensor>> block_inputs;  // (rgb,tir) per layer
    std::vector<std::pair<Tensor, Tensor>> dfm_enhanced;  // (rgb_hat,tir_hat)
    std::vector<Tensor> dfm_fused;                        // x_dfm per layer
    std::vector<Tensor> fusion_stack;                     // what the fusion stage consumed
    int64_t ofm_input_tokens = 0;
};

struct Prediction {
    Tensor heatmap;              // [B, Ls], rows sum to 1
    Tensor box_wh;               // [B, 2] in pixels
    std::vector<int64_t> cells;  // cell used for the size head, per batch element
    BBox decode(const PipelineConfig& cfg, int64_t b) const;
};

class AinetModel {
public:
    explicit AinetModel(const PipelineConfig& cfg);

    // Single-frame patch embedding (projection + bias only, no positions):
    // frame values row-major [size*size] -> [(size/patch)^2, C]
    Tensor patch_tokens(const std::vector<double>& frame, int64_t size) const;

    // Full pass over a batch of samples. train_cells, when given, selects the
    // size-head cell (ground-truth cell during training); otherwise the
    // heatmap argmax is used. trace, when given, records wiring.
    Prediction forward(const std::vector<const TrackSample*>& batch,
                       const std::vector<int64_t>* train_cells = nullptr,
                       ForwardTrace* trace = nullptr) const;

    // search-region grid cell containing the box center
    int64_t gt_cell(const BBox& box) const;

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const PipelineConfig& config() const { return cfg_; }

    static int64_t param_count(const PipelineConfig& cfg);

private:
    Tensor embed_modality(const std::vector<const TrackSample*>& batch, bool tir) const;
    Tensor backbone_block(int layer, const Tensor& x) const;

    PipelineConfig cfg_;
    ParamStore store_;

    Tensor embed_w_, embed_b_;             // [p*p, C], [C]
    Tensor pos_search_, pos_template_;     // [Ls, C], [Lt, C]
    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b;
        Tensor w1, b1, w2, b2;  // MLP C -> 2C -> C
    };
    std::vector<Block> blocks_;
    std::vector<std::unique_ptr<Dfm>> dfm_;  // per layer when mode uses DFM
    std::unique_ptr<Ofm> ofm_;               // when mode uses OFM
    Tensor head_ln_g_, head_ln_b_;
    Tensor score_w_, score_b_;               // [C,1],[1]
    Tensor size_w1_, size_b1_, size_w2_, size_b2_;
};

// ---------------------------------------------------------------------------
// training / evaluation
// ---------------------------------------------------------------------------

struct EvalStats {
    double mean_iou = 0;
    std::array<double, 3> regime_iou = {0, 0, 0};  // RgbClear, TirClear, Both
    std::array<int64_t, 3> regime_count = {0, 0, 0};
};

// focal-style heatmap term + normalized L1 size term, mean over the batch
Tensor training_loss(const AinetModel& model, const Prediction& pred,
                     const std::vector<const TrackSample*>& batch);

EvalStats evaluate(const AinetModel& model, const std::vector<TrackSample>& samples);

struct TrainResult {
    double first_loss = 0;
    double final_loss = 0;
    EvalStats final_eval;
    int64_t steps_run = 0;
};

// Trains in place; writes one CSV row per step to metrics (when given):
// step,loss,mean_iou,iou_rgb_clear,iou_tir_clear,iou_both with the IoU columns
// filled on eval steps only. Throws on NaN loss.
TrainResult train_model(AinetModel& model, const std::vector<TrackSample>& train_set,
                        const std::vector<TrackSample>& test_set, std::ostream* metrics);

// End-to-end run: generate data from cfg.seed, train, write out_dir/metrics.csv
// and out_dir/checkpoint/. Returns the final evaluation.
TrainResult demo_train(const PipelineConfig& cfg, const std::string& out_dir);

// Load the checkpoint under run_dir into a fresh model and evaluate it on the
// config's test split.
EvalStats demo_eval(const PipelineConfig& cfg, const std::string& run_dir);

}  // namespace ainet
