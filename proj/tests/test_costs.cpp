#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ainet/costs.hpp"

using namespace ainet;
using namespace ainet::bench;

namespace {

OfmConfig ofm_cfg(int64_t N, int64_t L, int64_t C) {
    OfmConfig cfg;
    cfg.num_layers = N;
    cfg.tokens_per_layer = L;
    cfg.channels = C;
    return cfg;
}

long long instrumented_ofm(const OfmConfig& cfg, int64_t B) {
    ParamStore store;
    Ofm ofm(store, "ofm", cfg);
    store.init_all(5);
    Rng rng(6);
    LayerStack stack;
    for (int64_t i = 0; i < cfg.num_layers; ++i)
        stack.layers.push_back(Tensor::randn({B, cfg.tokens_per_layer, cfg.channels}, rng, 0.5));
    autograd::NoGradGuard ng;
    CostCounter::reset();
    CostCounter::enabled() = true;
    ofm.forward(stack);
    CostCounter::enabled() = false;
    return CostCounter::count();
}

}  // namespace

TEST_CASE("analytic OFM count equals the instrumented counter exactly") {
    CHECK(instrumented_ofm(ofm_cfg(2, 8, 4), 1) == ofm_mults_adds(ofm_cfg(2, 8, 4), 1));
    CHECK(instrumented_ofm(ofm_cfg(3, 5, 8), 2) == ofm_mults_adds(ofm_cfg(3, 5, 8), 2));
    OfmConfig no_skip = ofm_cfg(2, 6, 4);
    no_skip.use_skip = false;
    CHECK(instrumented_ofm(no_skip, 1) == ofm_mults_adds(no_skip, 1));
}

TEST_CASE("analytic attention count equals the instrumented counter exactly") {
    Rng rng(7);
    for (auto [T, C, B] : {std::tuple<int64_t, int64_t, int64_t>{12, 4, 1}, {9, 8, 2}}) {
        AttentionProbe probe = AttentionProbe::create(C, rng);
        Tensor x = Tensor::randn({B, T, C}, rng, 0.5);
        autograd::NoGradGuard ng;
        CostCounter::reset();
        CostCounter::enabled() = true;
        probe.forward(x);
        CostCounter::enabled() = false;
        CHECK(CostCounter::count() == attention_mults_adds(T, C, B));
    }
}

TEST_CASE("counters are pure functions of configuration") {
    CHECK(ofm_mults_adds(ofm_cfg(4, 320, 32)) == ofm_mults_adds(ofm_cfg(4, 320, 32)));
    CHECK(attention_mults_adds(640, 32) == attention_mults_adds(640, 32));
}

TEST_CASE("attention doubles tokens to ~4x cost, OFM to ~2x") {
    const int64_t C = 32;
    for (int64_t T : {960, 1280, 1920}) {
        const double ratio = static_cast<double>(attention_mults_adds(2 * T, C)) /
                             static_cast<double>(attention_mults_adds(T, C));
        CHECK(ratio >= 3.6);
        CHECK(ratio <= 4.4);
    }
    for (int64_t N : {1, 2, 4, 6}) {
        const double ratio = static_cast<double>(ofm_mults_adds(ofm_cfg(2 * N, 320, C))) /
                             static_cast<double>(ofm_mults_adds(ofm_cfg(N, 320, C)));
        CHECK(ratio >= 1.9);
        CHECK(ratio <= 2.1);
    }
}

TEST_CASE("log-log slopes over the token sweep") {
    ScalingOptions opt;
    opt.measure_wall_time = false;
    auto rows = bench_scaling(opt);
    REQUIRE(rows.size() == 12);
    const double ofm_slope = loglog_slope(rows, "ofm");
    const double attn_slope = loglog_slope(rows, "attention");
    INFO("ofm slope ", ofm_slope, " attention slope ", attn_slope);
    CHECK(ofm_slope >= 0.95);
    CHECK(ofm_slope <= 1.15);
    CHECK(attn_slope >= 1.85);
    CHECK(attn_slope <= 2.05);
    // peak-live proxy shows the same shapes
    for (const auto& r : rows)
        if (r.model == "attention" && r.token_count == 3840)
            CHECK(r.peak_live_values == 2LL * 3840 * 3840 + 6LL * 3840 * 32);
}

TEST_CASE("token counts must increase and divide into layers") {
    ScalingOptions opt;
    opt.measure_wall_time = false;
    opt.token_counts = {320, 320};
    CHECK_THROWS_AS(bench_scaling(opt), Error);
    opt.token_counts = {300};
    CHECK_THROWS_AS(bench_scaling(opt), Error);
}

TEST_CASE("cost CSV round-trips the integer columns bitwise") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "ainet_costs_test.csv").string();
    ScalingOptions opt;
    opt.measure_wall_time = false;
    opt.token_counts = {320, 640, 1280};
    auto rows = bench_scaling(opt);
    rows[0].wall_ms = 1.234567;  // exercise the 6-sig-digit real column
    write_cost_csv(path, rows);
    auto parsed = read_cost_csv(path);
    REQUIRE(parsed.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(parsed[i].token_count == rows[i].token_count);
        CHECK(parsed[i].model == rows[i].model);
        CHECK(parsed[i].mults_adds == rows[i].mults_adds);
        CHECK(parsed[i].peak_live_values == rows[i].peak_live_values);
    }
    // LF line endings, no CR
    std::ifstream f(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(content.find('\r') == std::string::npos);
    fs::remove(path);
}

TEST_CASE("slope fit recovers an exact power law") {
    std::vector<CostRow> rows;
    for (int64_t t : {100, 200, 400, 800}) {
        CostRow r;
        r.token_count = t;
        r.model = "synthetic";
        r.mults_adds = 7 * t * t;
        rows.push_back(r);
    }
    CHECK(loglog_slope(rows, "synthetic") == doctest::Approx(2.0).epsilon(1e-12));
}
