#include "ainet/costs.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ainet::bench {

long long ofm_mults_adds(const OfmConfig& cfg, int64_t batch_size) {
    const long long B = batch_size;
    const long long C = cfg.channels;
    const long long N = cfg.num_layers;
    const long long L = cfg.tokens_per_layer;
    const long long T = N * L;
    const long long K = cfg.conv_width;
    const long long Nst = cfg.state_size;
    const long long R = dt_rank_for(C);

    const long long scan_per = 10 * Nst + (cfg.use_skip ? 2 : 0);
    const long long branch = B * T * C * (K + 1 + 1 + (R + 2 * Nst) + R + 2 + scan_per)
                             + 2 * C * Nst;  // exp(a_log) + negate
    const long long predictor = B * T * C + B * N * C + B * N * C * C + 2 * B * N * C
                                + B * N * C + B * N;
    const long long gate = B * T * C * C + 2 * B * T * C;
    const long long fuse = 5 * B * T * C;
    const long long out = B * T * C * C + B * T * C;
    const long long aggregate = (N - 1) * B * L * C;
    return 3 * branch + predictor + gate + fuse + out + aggregate;
}

long long ofm_peak_live(const OfmConfig& cfg) {
    const long long C = cfg.channels;
    const long long N = cfg.num_layers;
    const long long L = cfg.tokens_per_layer;
    const long long T = N * L;
    const long long Nst = cfg.state_size;
    const long long R = dt_rank_for(C);
    return 10 * T * C + T * (R + 2 * Nst) + L * C + N * C + N + C * Nst;
}

long long attention_mults_adds(int64_t tokens, int64_t channels, int64_t batch_size) {
    const long long B = batch_size, T = tokens, C = channels;
    return B * (4 * T * C * C + 4 * T * C + 2 * T * T * C + 5 * T * T);
}

long long attention_peak_live(int64_t tokens, int64_t channels) {
    const long long T = tokens, C = channels;
    return 2 * T * T + 6 * T * C;
}

AttentionProbe AttentionProbe::create(int64_t channels, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    AttentionProbe p;
    p.wq = Tensor::rand_uniform({channels, channels}, rng, -bound, bound);
    p.bq = Tensor::zeros({channels});
    p.wk = Tensor::rand_uniform({channels, channels}, rng, -bound, bound);
    p.bk = Tensor::zeros({channels});
    p.wv = Tensor::rand_uniform({channels, channels}, rng, -bound, bound);
    p.bv = Tensor::zeros({channels});
    p.wo = Tensor::rand_uniform({channels, channels}, rng, -bound, bound);
    p.bo = Tensor::zeros({channels});
    return p;
}

Tensor AttentionProbe::forward(const Tensor& x) const {
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(x.dim(2)));
    Tensor q = linear(x, wq, bq);
    Tensor k = linear(x, wk, bk);
    Tensor v = linear(x, wv, bv);
    Tensor attn = softmax(scale(matmul(q, transpose_last(k)), inv_sqrt_c));
    return linear(matmul(attn, v), wo, bo);
}

namespace {

double time_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

std::vector<CostRow> bench_scaling(const ScalingOptions& opt) {
    check(!opt.token_counts.empty(), "bench_scaling: no token counts");
    for (size_t i = 0; i + 1 < opt.token_counts.size(); ++i)
        check(opt.token_counts[i] < opt.token_counts[i + 1],
              "bench_scaling: token counts must be strictly increasing");
    for (int64_t t : opt.token_counts)
        check(t % opt.tokens_per_layer == 0,
              "bench_scaling: token count " + std::to_string(t) + " is not a multiple of " +
                  std::to_string(opt.tokens_per_layer));

    std::vector<CostRow> rows;
    Rng rng(7);
    for (int64_t tokens : opt.token_counts) {
        OfmConfig cfg;
        cfg.channels = opt.channels;
        cfg.tokens_per_layer = opt.tokens_per_layer;
        cfg.num_layers = tokens / opt.tokens_per_layer;
        CostRow row;
        row.token_count = tokens;
        row.model = "ofm";
        row.mults_adds = ofm_mults_adds(cfg);
        row.peak_live_values = ofm_peak_live(cfg);
        if (opt.measure_wall_time) {
            ParamStore store;
            Ofm ofm(store, "ofm", cfg);
            store.init_all(7);
            LayerStack stack;
            for (int64_t i = 0; i < cfg.num_layers; ++i)
                stack.layers.push_back(
                    Tensor::randn({1, cfg.tokens_per_layer, cfg.channels}, rng, 0.5));
            autograd::NoGradGuard ng;
            row.wall_ms = time_ms([&] { ofm.forward(stack); });
        }
        rows.push_back(row);
    }
    for (int64_t tokens : opt.token_counts) {
        CostRow row;
        row.token_count = tokens;
        row.model = "attention";
        row.mults_adds = attention_mults_adds(tokens, opt.channels);
        row.peak_live_values = attention_peak_live(tokens, opt.channels);
        if (opt.measure_wall_time) {
            AttentionProbe probe = AttentionProbe::create(opt.channels, rng);
            Tensor x = Tensor::randn({1, tokens, opt.channels}, rng, 0.5);
            autograd::NoGradGuard ng;
            row.wall_ms = time_ms([&] { probe.forward(x); });
        }
        rows.push_back(row);
    }
    return rows;
}

void write_cost_csv(const std::string& path, const std::vector<CostRow>& rows) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    check(f.good(), "cannot open " + path + " for writing");
    f << "token_count,model,mults_adds,peak_live_values,wall_ms\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6g", r.wall_ms);
        f << r.token_count << "," << r.model << "," << r.mults_adds << ","
          << r.peak_live_values << "," << buf << "\n";
    }
    check(f.good(), "write failed: " + path);
}

std::vector<CostRow> read_cost_csv(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "cannot open " + path);
    std::string line;
    check(static_cast<bool>(std::getline(f, line)), "empty CSV: " + path);
    check(line == "token_count,model,mults_adds,peak_live_values,wall_ms",
          "unexpected CSV header in " + path + ": " + line);
    std::vector<CostRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        CostRow r;
        std::getline(ss, field, ',');
        r.token_count = std::stoll(field);
        std::getline(ss, r.model, ',');
        std::getline(ss, field, ',');
        r.mults_adds = std::stoll(field);
        std::getline(ss, field, ',');
        r.peak_live_values = std::stoll(field);
        std::getline(ss, field, ',');
        r.wall_ms = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

double loglog_slope(const std::vector<CostRow>& rows, const std::string& model) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int64_t n = 0;
    for (const auto& r : rows) {
        if (r.model != model) continue;
        const double x = std::log(static_cast<double>(r.token_count));
        const double y = std::log(static_cast<double>(r.mults_adds));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    check(n >= 2, "loglog_slope: need at least two rows for model " + model);
    const double nn = static_cast<double>(n);
    return (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
}

}  // namespace ainet::bench
