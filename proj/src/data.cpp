#include <algorithm>
#include <cmath>

#include "ainet/pipeline.hpp"

namespace ainet {

namespace {

constexpr double kNoiseSigma = 0.05;

void add_noise(std::vector<double>& img, Rng& rng) {
    for (auto& v : img) v += kNoiseSigma * rng.normal();
}

// compact super-gaussian blob; intensity amp*exp(-r^4) with r=1 at the box edge
void render_blob(std::vector<double>& img, int64_t size, double cx, double cy, double w, double h,
                 double amp) {
    if (amp == 0.0) return;
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx - w));
    const int64_t x1 = std::min<int64_t>(size - 1, static_cast<int64_t>(cx + w) + 1);
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy - h));
    const int64_t y1 = std::min<int64_t>(size - 1, static_cast<int64_t>(cy + h) + 1);
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
            const double u = 2.0 * (static_cast<double>(x) + 0.5 - cx) / w;
            const double v = 2.0 * (static_cast<double>(y) + 0.5 - cy) / h;
            const double r2 = u * u + v * v;
            img[static_cast<size_t>(y * size + x)] += amp * std::exp(-r2 * r2);
        }
}

struct TargetAppearance {
    double w, h;
    double amp_rgb, amp_tir;
};

TargetAppearance draw_target(Rng& rng, Regime regime) {
    TargetAppearance t;
    t.w = rng.uniform(16.0, 28.0);
    t.h = rng.uniform(16.0, 28.0);
    switch (regime) {
        case Regime::RgbClear:
            t.amp_rgb = rng.uniform(0.8, 1.2);
            t.amp_tir = 0.0;
            break;
        case Regime::TirClear:
            t.amp_rgb = 0.0;
            t.amp_tir = rng.uniform(0.8, 1.2);
            break;
        case Regime::Both:
            t.amp_rgb = rng.uniform(0.7, 1.0);
            t.amp_tir = rng.uniform(0.7, 1.0);
            break;
    }
    return t;
}

// distractor far enough from the target that the boxes never overlap
std::pair<double, double> place_distractor(Rng& rng, int64_t size, double tcx, double tcy,
                                           double min_dist) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        const double cx = rng.uniform(8.0, static_cast<double>(size) - 8.0);
        const double cy = rng.uniform(8.0, static_cast<double>(size) - 8.0);
        const double dx = cx - tcx, dy = cy - tcy;
        if (std::sqrt(dx * dx + dy * dy) >= min_dist) return {cx, cy};
    }
    // fall back to the corner farthest from the target
    const double cx = tcx < size / 2.0 ? size - 10.0 : 10.0;
    const double cy = tcy < size / 2.0 ? size - 10.0 : 10.0;
    return {cx, cy};
}

}  // namespace

std::vector<TrackSample> generate_dataset(uint64_t seed, int64_t n_sequences,
                                          int64_t frames_per_sequence,
                                          const PipelineConfig& geom,
                                          std::array<double, 3> regime_mix) {
    check(n_sequences >= 1 && frames_per_sequence >= 1,
          "generate_dataset: counts must be >= 1");
    const double mix_total = regime_mix[0] + regime_mix[1] + regime_mix[2];
    check(mix_total > 0, "generate_dataset: regime mix must have positive mass");
    const int64_t S = geom.search_size;
    const int64_t T = geom.template_size;

    std::vector<TrackSample> out;
    out.reserve(static_cast<size_t>(n_sequences * frames_per_sequence));
    for (int64_t sq = 0; sq < n_sequences; ++sq) {
        // per-sequence stream derived from (seed, index): order-independent
        Rng rng(Rng::derive(seed, "sequence." + std::to_string(sq)));

        const double pick = rng.uniform() * mix_total;
        Regime regime = pick < regime_mix[0]                   ? Regime::RgbClear
                        : pick < regime_mix[0] + regime_mix[1] ? Regime::TirClear
                                                               : Regime::Both;
        TargetAppearance target = draw_target(rng, regime);

        const double margin = std::max(target.w, target.h) / 2.0 + 2.0;
        double cx = rng.uniform(margin, static_cast<double>(S) - margin);
        double cy = rng.uniform(margin, static_cast<double>(S) - margin);

        // template: the target exemplar centered, same appearance, no distractors
        std::vector<double> rgb_tmpl(static_cast<size_t>(T * T), 0.0);
        std::vector<double> tir_tmpl(static_cast<size_t>(T * T), 0.0);
        render_blob(rgb_tmpl, T, T / 2.0, T / 2.0, target.w, target.h, target.amp_rgb);
        render_blob(tir_tmpl, T, T / 2.0, T / 2.0, target.w, target.h, target.amp_tir);
        add_noise(rgb_tmpl, rng);
        add_noise(tir_tmpl, rng);

        for (int64_t fr = 0; fr < frames_per_sequence; ++fr) {
            cx = std::clamp(cx + 2.0 * rng.normal(), margin, static_cast<double>(S) - margin);
            cy = std::clamp(cy + 2.0 * rng.normal(), margin, static_cast<double>(S) - margin);

            TrackSample sample;
            sample.sequence = sq;
            sample.frame = fr;
            sample.regime = regime;
            sample.gt_box = {cx, cy, target.w, target.h};
            sample.rgb_frame.assign(static_cast<size_t>(S * S), 0.0);
            sample.tir_frame.assign(static_cast<size_t>(S * S), 0.0);

            render_blob(sample.rgb_frame, S, cx, cy, target.w, target.h, target.amp_rgb);
            render_blob(sample.tir_frame, S, cx, cy, target.w, target.h, target.amp_tir);

            // one single-modality decoy per modality; larger than the target so
            // template matching can resolve it, amplitude in the ambiguous range
            // for a stream-summed detector
            const double df = rng.uniform(1.4, 1.8);
            const double dw = std::min(target.w * df, 40.0);
            const double dh = std::min(target.h * df, 40.0);
            const double min_dist = (std::max(target.w, target.h) + std::max(dw, dh)) / 2.0 + 6.0;
            auto [rx, ry] = place_distractor(rng, S, cx, cy, min_dist);
            render_blob(sample.rgb_frame, S, rx, ry, dw, dh,
                        regime == Regime::Both ? rng.uniform(1.1, 1.4) : rng.uniform(0.8, 1.2));
            auto [tx, ty] = place_distractor(rng, S, cx, cy, min_dist);
            render_blob(sample.tir_frame, S, tx, ty, dw, dh,
                        regime == Regime::Both ? rng.uniform(1.1, 1.4) : rng.uniform(0.8, 1.2));

            add_noise(sample.rgb_frame, rng);
            add_noise(sample.tir_frame, rng);
            sample.rgb_template = rgb_tmpl;
            sample.tir_template = tir_tmpl;
            out.push_back(std::move(sample));
        }
    }
    return out;
}

}  // namespace ainet
