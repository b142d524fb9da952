#pragma once

#include <string>
#include <vector>

#include "ainet/ofm.hpp"

namespace ainet::bench {

// One benchmark row. mults_adds and peak_live_values are exact analytic
// integers; wall_ms is informative only and never asserted.
struct CostRow {
    int64_t token_count = 0;
    std::string model;  // "ofm" | "attention"
    long long mults_adds = 0;
    long long peak_live_values = 0;
    double wall_ms = 0.0;
};

// Closed-form multiply-add count of one Ofm::forward over batch_size
// sequences; mirrors the executed op sequence exactly (validated against the
// instrumented counter):
//   per branch (3x): B*T*C*(K + 6 + 2R + 12*Nst [+2 skip]) + 2*C*Nst
//   order predictor: B*T*C + B*N*C^2 + 4*B*N*C + B*N
//   gate:            B*T*C^2 + 2*B*T*C
//   branch fuse:     5*B*T*C
//   out projection:  B*T*C^2 + B*T*C
//   layer aggregate: (N-1)*B*L*C
// with T = N*L, R = dt_rank(C), Nst = state size, K = conv width.
long long ofm_mults_adds(const OfmConfig& cfg, int64_t batch_size = 1);

// Live-activation proxy of one OFM inference pass (documented convention:
// input + branch transients + three branch outputs + gate/out buffers +
// predictor + state row). Linear in T.
long long ofm_peak_live(const OfmConfig& cfg);

// Single-head self-attention interaction baseline over T = N*L tokens:
//   mults_adds = 4*T*C^2 + 4*T*C + 2*T^2*C + 5*T^2   (per batch element)
//   peak_live  = 2*T^2 + 6*T*C
long long attention_mults_adds(int64_t tokens, int64_t channels, int64_t batch_size = 1);
long long attention_peak_live(int64_t tokens, int64_t channels);

// Minimal attention forward used to validate the counter (and for wall_ms).
struct AttentionProbe {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    static AttentionProbe create(int64_t channels, Rng& rng);
    Tensor forward(const Tensor& x) const;  // [B,T,C] -> [B,T,C]
};

struct ScalingOptions {
    std::vector<int64_t> token_counts = {320, 640, 1280, 1920, 2560, 3840};
    int64_t tokens_per_layer = 320;  // token counts must be multiples of this
    int64_t channels = 32;
    bool measure_wall_time = true;
};

// Rows for both models, each block in strictly increasing token order.
std::vector<CostRow> bench_scaling(const ScalingOptions& opt);

// CSV: header token_count,model,mults_adds,peak_live_values,wall_ms;
// UTF-8, LF endings, integers unformatted, reals with 6 significant digits.
void write_cost_csv(const std::string& path, const std::vector<CostRow>& rows);
std::vector<CostRow> read_cost_csv(const std::string& path);

// Least-squares slope of log(mults_adds) vs log(token_count) for one model.
double loglog_slope(const std::vector<CostRow>& rows, const std::string& model);

}  // namespace ainet::bench
