#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ainet/oracle.hpp"

using namespace ainet;

namespace {

PipelineConfig desk_config(FusionMode mode, uint64_t seed) {
    PipelineConfig cfg;
    cfg.num_layers = 4;
    cfg.channels = 32;
    cfg.search_size = 64;
    cfg.template_size = 32;
    cfg.patch = 8;
    cfg.fusion_mode = mode;
    cfg.seed = seed;
    return cfg;
}

PipelineConfig tiny_config(FusionMode mode, uint64_t seed) {
    PipelineConfig cfg;
    cfg.num_layers = 2;
    cfg.channels = 8;
    cfg.search_size = 32;
    cfg.template_size = 16;
    cfg.patch = 8;  // 16 + 4 = 20 tokens
    cfg.fusion_mode = mode;
    cfg.seed = seed;
    cfg.steps = 50;
    cfg.batch_size = 2;
    cfg.eval_every = 25;
    cfg.train_sequences = 6;
    cfg.test_sequences = 3;
    cfg.frames_per_sequence = 4;
    return cfg;
}

}  // namespace

TEST_CASE("token bookkeeping for both geometries") {
    PipelineConfig paper = desk_config(FusionMode::DfmOfm, 0);
    paper.search_size = 256;
    paper.template_size = 128;
    paper.patch = 16;
    paper.num_layers = 12;
    CHECK(paper.search_tokens() == 256);
    CHECK(paper.template_tokens() == 64);
    CHECK(paper.tokens_per_layer() == 320);
    CHECK(paper.num_layers * paper.tokens_per_layer() == 3840);

    PipelineConfig desk = desk_config(FusionMode::DfmOfm, 0);
    CHECK(desk.tokens_per_layer() == 80);
}

TEST_CASE("config json: round trip, unknown keys, divisibility") {
    PipelineConfig cfg = desk_config(FusionMode::DfmOnly, 42);
    cfg.lr = 0.005;
    PipelineConfig back = parse_config_json(config_to_json(cfg));
    CHECK(back.fusion_mode == FusionMode::DfmOnly);
    CHECK(back.seed == 42);
    CHECK(back.lr == 0.005);
    CHECK(back.num_layers == cfg.num_layers);

    CHECK_THROWS_AS(parse_config_json(R"({"num_layers": 4, "mystery": 1})"), Error);
    CHECK_THROWS_AS(parse_config_json(R"({"fusion_mode": "bogus"})"), Error);
    CHECK_THROWS_AS(parse_config_json(R"({"search_size": 65})"), Error);  // not divisible by 8
}

TEST_CASE("patch embedding of a zero frame with zero bias gives zero tokens") {
    AinetModel model(tiny_config(FusionMode::BaselineAdd, 5));
    std::vector<double> zero_frame(32 * 32, 0.0);
    Tensor tokens = model.patch_tokens(zero_frame, 32);
    CHECK(tokens.shape() == Shape{16, 8});
    for (double v : tokens.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(model.patch_tokens(std::vector<double>(30 * 30, 0.0), 30), Error);
}

TEST_CASE("backbone attention rows sum to one") {
    PipelineConfig cfg = tiny_config(FusionMode::BaselineAdd, 9);
    AinetModel model(cfg);
    const auto& store = model.params();
    Rng rng(10);
    autograd::NoGradGuard ng;
    Tensor x = Tensor::randn({1, cfg.tokens_per_layer(), cfg.channels}, rng, 0.5);
    // reconstruct the block's attention matrix from its own parameters
    Tensor y = layer_norm(x, store.get("block.0.ln1.gamma"), store.get("block.0.ln1.beta"));
    Tensor q = linear(y, store.get("block.0.attn.q.weight"), store.get("block.0.attn.q.bias"));
    Tensor k = linear(y, store.get("block.0.attn.k.weight"), store.get("block.0.attn.k.bias"));
    Tensor attn = softmax(scale(matmul(q, transpose_last(k)),
                                1.0 / std::sqrt(static_cast<double>(cfg.channels))));
    const int64_t L = cfg.tokens_per_layer();
    for (int64_t i = 0; i < L; ++i) {
        double row = 0;
        for (int64_t j = 0; j < L; ++j) row += attn.at({0, i, j});
        CHECK(std::fabs(row - 1.0) < 1e-12);
    }
}

TEST_CASE("shared backbone weights: identical modalities stay in lockstep") {
    PipelineConfig cfg = tiny_config(FusionMode::BaselineAdd, 7);
    AinetModel model(cfg);
    auto data = generate_dataset(3, 2, 2, cfg);
    TrackSample twin = data[0];
    twin.tir_frame = twin.rgb_frame;  // same pixels into both streams
    twin.tir_template = twin.rgb_template;
    std::vector<const TrackSample*> batch = {&twin};
    autograd::NoGradGuard ng;
    // there is one parameter set per block (no .rgb/.tir variants registered)
    for (const auto& p : model.params().entries()) {
        CHECK(p.name.find("rgb") == std::string::npos);
        CHECK(p.name.find("tir") == std::string::npos);
    }
    Prediction pred = model.forward(batch);
    CHECK(pred.heatmap.shape() == Shape{1, 16});
}

TEST_CASE("forward wiring follows the per-layer enhancement loop") {
    PipelineConfig cfg = tiny_config(FusionMode::DfmOfm, 11);
    AinetModel model(cfg);
    auto data = generate_dataset(12, 1, 1, cfg);
    std::vector<const TrackSample*> batch = {&data[0]};
    ForwardTrace trace;
    autograd::NoGradGuard ng;
    model.forward(batch, nullptr, &trace);

    REQUIRE(trace.block_inputs.size() == 2);
    REQUIRE(trace.dfm_enhanced.size() == 2);
    REQUIRE(trace.fusion_stack.size() == 2);
    // Eq.5 wiring: block i consumes exactly the (i-1)-th enhancement outputs
    CHECK(trace.block_inputs[1].first.id() == trace.dfm_enhanced[0].first.id());
    CHECK(trace.block_inputs[1].second.id() == trace.dfm_enhanced[0].second.id());
    // Eq.6 wiring: the fusion stage consumed the per-layer DFM outputs, in
    // ascending layer order, and nothing else
    REQUIRE(trace.dfm_fused.size() == 2);
    for (size_t i = 0; i < 2; ++i)
        CHECK(trace.fusion_stack[i].id() == trace.dfm_fused[i].id());
    CHECK(trace.ofm_input_tokens == cfg.num_layers * cfg.tokens_per_layer());
}

TEST_CASE("12-layer paper geometry feeds exactly 3840 tokens into the OFM") {
    PipelineConfig cfg;
    cfg.num_layers = 12;
    cfg.channels = 8;  // channel count does not affect the token budget
    cfg.search_size = 256;
    cfg.template_size = 128;
    cfg.patch = 16;
    cfg.fusion_mode = FusionMode::DfmOfm;
    cfg.seed = 13;
    AinetModel model(cfg);
    auto data = generate_dataset(14, 1, 1, cfg);
    std::vector<const TrackSample*> batch = {&data[0]};
    ForwardTrace trace;
    autograd::NoGradGuard ng;
    model.forward(batch, nullptr, &trace);
    CHECK(trace.ofm_input_tokens == 3840);
}

TEST_CASE("heatmap is a distribution over search tokens") {
    PipelineConfig cfg = tiny_config(FusionMode::DfmOfm, 15);
    AinetModel model(cfg);
    auto data = generate_dataset(16, 2, 2, cfg);
    std::vector<const TrackSample*> batch = {&data[0], &data[1]};
    autograd::NoGradGuard ng;
    Prediction pred = model.forward(batch);
    REQUIRE(pred.heatmap.shape() == Shape{2, 16});
    for (int64_t b = 0; b < 2; ++b) {
        double total = 0;
        for (int64_t i = 0; i < 16; ++i) {
            CHECK(pred.heatmap.at({b, i}) >= 0.0);
            total += pred.heatmap.at({b, i});
        }
        CHECK(std::fabs(total - 1.0) < 1e-12);
    }
    // box sizes are positive by construction
    CHECK(pred.box_wh.at({0, 0}) > 0.0);
    CHECK(pred.box_wh.at({0, 1}) > 0.0);
}

TEST_CASE("ablation modes differ only in fusion wiring; counts match closed forms") {
    for (FusionMode mode : {FusionMode::BaselineAdd, FusionMode::DfmOnly, FusionMode::OfmOnly,
                            FusionMode::DfmOfm}) {
        PipelineConfig cfg = desk_config(mode, 1);
        AinetModel model(cfg);
        CHECK(model.params().scalar_count() == AinetModel::param_count(cfg));
    }
    // shared trunk: every baseline parameter name exists in every other mode
    AinetModel base(desk_config(FusionMode::BaselineAdd, 1));
    AinetModel full(desk_config(FusionMode::DfmOfm, 1));
    for (const auto& p : base.params().entries()) CHECK(full.params().has(p.name));
    // and the full mode adds exactly the DFM + OFM parameters
    DfmConfig dc;
    dc.channels = 32;
    dc.mamba.model_dim = 32;
    OfmConfig oc;
    oc.channels = 32;
    oc.num_layers = 4;
    oc.tokens_per_layer = 80;
    CHECK(full.params().scalar_count() ==
          base.params().scalar_count() + 4 * Dfm::param_count(dc) + Ofm::param_count(oc));
}

TEST_CASE("baseline mode registers no fusion parameters") {
    AinetModel base(desk_config(FusionMode::BaselineAdd, 2));
    for (const auto& p : base.params().entries()) {
        CHECK(p.name.rfind("dfm.", 0) == std::string::npos);
        CHECK(p.name.rfind("ofm.", 0) == std::string::npos);
    }
}

TEST_CASE("dataset generation is reproducible and well-formed") {
    PipelineConfig cfg = desk_config(FusionMode::DfmOfm, 0);
    auto a = generate_dataset(77, 6, 4, cfg);
    auto b = generate_dataset(77, 6, 4, cfg);
    REQUIRE(a.size() == 24);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].rgb_frame == b[i].rgb_frame);
        CHECK(a[i].tir_frame == b[i].tir_frame);
        CHECK(a[i].gt_box.cx == b[i].gt_box.cx);
        CHECK(a[i].regime == b[i].regime);
    }
    auto c = generate_dataset(78, 6, 4, cfg);
    CHECK(a[0].rgb_frame != c[0].rgb_frame);

    for (const auto& s : a) {
        CHECK(s.gt_box.w > 0);
        CHECK(s.gt_box.h > 0);
        CHECK(s.gt_box.cx - s.gt_box.w / 2 >= 0.0);
        CHECK(s.gt_box.cx + s.gt_box.w / 2 <= 64.0);
        CHECK(s.gt_box.cy - s.gt_box.h / 2 >= 0.0);
        CHECK(s.gt_box.cy + s.gt_box.h / 2 <= 64.0);
    }
}

TEST_CASE("rgb_clear frames have no thermal target contrast; regimes are balanced") {
    PipelineConfig cfg = desk_config(FusionMode::DfmOfm, 0);
    auto data = generate_dataset(123, 250, 4, cfg);  // 1000 frames
    const int64_t S = cfg.search_size;
    double rgb_contrast_sum = 0, tir_contrast_sum = 0;
    int64_t rgb_clear_frames = 0;
    std::array<int64_t, 3> regime_counts = {0, 0, 0};
    for (const auto& s : data) {
        ++regime_counts[static_cast<size_t>(s.regime)];
        if (s.regime != Regime::RgbClear) continue;
        ++rgb_clear_frames;
        auto box_mean = [&](const std::vector<double>& img) {
            double acc = 0;
            int64_t n = 0;
            const auto& b = s.gt_box;
            for (int64_t y = static_cast<int64_t>(b.cy - b.h / 4);
                 y <= static_cast<int64_t>(b.cy + b.h / 4); ++y)
                for (int64_t x = static_cast<int64_t>(b.cx - b.w / 4);
                     x <= static_cast<int64_t>(b.cx + b.w / 4); ++x) {
                    acc += img[static_cast<size_t>(y * S + x)];
                    ++n;
                }
            return acc / static_cast<double>(n);
        };
        // inner-target mean against the zero-mean background
        rgb_contrast_sum += box_mean(s.rgb_frame);
        tir_contrast_sum += std::fabs(box_mean(s.tir_frame));
    }
    REQUIRE(rgb_clear_frames > 100);
    const double rgb_contrast = rgb_contrast_sum / rgb_clear_frames;
    const double tir_contrast = tir_contrast_sum / rgb_clear_frames;
    CHECK(rgb_contrast > 0.5);   // strong visible-band signal
    CHECK(tir_contrast < 0.02);  // below the 0.05 noise floor
    for (int64_t c2 : regime_counts) CHECK(c2 > 200);  // roughly a third each
}

TEST_CASE("short training run: loss decreases, metrics rows well-formed") {
    PipelineConfig cfg = tiny_config(FusionMode::DfmOfm, 21);
    cfg.steps = 120;
    auto train_set = generate_dataset(Rng::derive(cfg.seed, "train.data"), cfg.train_sequences,
                                      cfg.frames_per_sequence, cfg);
    auto test_set = generate_dataset(Rng::derive(cfg.seed, "test.data"), cfg.test_sequences,
                                     cfg.frames_per_sequence, cfg);
    AinetModel model(cfg);
    std::stringstream metrics;
    TrainResult r = train_model(model, train_set, test_set, &metrics);
    CHECK(r.steps_run == 120);
    CHECK(r.final_loss < r.first_loss);
    CHECK(r.final_eval.mean_iou >= 0.0);

    std::string line;
    std::getline(metrics, line);
    CHECK(line == "step,loss,mean_iou,iou_rgb_clear,iou_tir_clear,iou_both");
    int64_t rows = 0, eval_rows = 0;
    while (std::getline(metrics, line)) {
        ++rows;
        if (line.find(",,,,") == std::string::npos) ++eval_rows;
    }
    CHECK(rows == 120);
    // evals at every eval_every steps plus the forced final-step eval
    CHECK(eval_rows == 120 / cfg.eval_every + (120 % cfg.eval_every ? 1 : 0));
}

TEST_CASE("training aborts with a diagnostic when the loss is not finite") {
    PipelineConfig cfg = tiny_config(FusionMode::BaselineAdd, 22);
    cfg.steps = 3;
    auto train_set = generate_dataset(1, 2, 2, cfg);
    AinetModel model(cfg);
    // poison one parameter
    Tensor w = model.params().get("head.score.weight");
    w.data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train_model(model, train_set, {}, nullptr),
                         doctest::Contains("diverged"), Error);
}

TEST_CASE("demo_train writes checkpoint, metrics and config; demo_eval reloads") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "ainet_demo_run").string();
    fs::remove_all(dir);
    PipelineConfig cfg = tiny_config(FusionMode::DfmOnly, 23);
    cfg.steps = 40;
    TrainResult r = demo_train(cfg, dir);
    CHECK(r.steps_run == 40);
    CHECK(fs::exists(fs::path(dir) / "metrics.csv"));
    CHECK(fs::exists(fs::path(dir) / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(fs::path(dir) / "config.json"));

    EvalStats ev = demo_eval(cfg, dir);
    CHECK(ev.mean_iou == doctest::Approx(r.final_eval.mean_iou).epsilon(1e-12));
    fs::remove_all(dir);
}

TEST_CASE("full-pipeline micro gradient check") {
    for (const auto& o : oracle::gradcheck_suite(24)) {
        if (o.name == "pipeline.micro") {
            INFO("max_rel_err=", o.max_err, " ", o.detail);
            CHECK(o.pass);
            return;
        }
    }
    FAIL("missing pipeline gradcheck");
}

TEST_CASE("iou basics") {
    BBox a{10, 10, 4, 4};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    BBox b{14, 10, 4, 4};
    CHECK(iou(a, b) == doctest::Approx(0.0));
    BBox c{12, 10, 4, 4};
    CHECK(iou(a, c) == doctest::Approx((2.0 * 4) / (2 * 16 - 8)));
}
