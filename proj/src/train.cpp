#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ainet/checkpoint.hpp"
#include "ainet/pipeline.hpp"

namespace ainet {

namespace fs = std::filesystem;

namespace {
constexpr double kSizeLossWeight = 2.0;
constexpr double kGradClip = 5.0;

// linear warmup into a cosine decay down to 10% of the peak rate
double lr_at(double peak, int64_t step, int64_t total) {
    const int64_t warm = std::min<int64_t>(100, std::max<int64_t>(1, total / 10));
    if (step < warm) return peak * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double t = static_cast<double>(step - warm) / static_cast<double>(std::max<int64_t>(1, total - warm));
    return peak * (0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * t)));
}
}  // namespace

// focal-style heatmap term + normalized L1 size term, mean over the batch
Tensor training_loss(const AinetModel& model, const Prediction& pred,
                     const std::vector<const TrackSample*>& batch) {
    const int64_t B = static_cast<int64_t>(batch.size());
    const int64_t Ls = model.config().search_tokens();
    std::vector<int64_t> cells(static_cast<size_t>(B));
    std::vector<double> gt_wh(static_cast<size_t>(2 * B));
    for (int64_t b = 0; b < B; ++b) {
        cells[static_cast<size_t>(b)] = model.gt_cell(batch[static_cast<size_t>(b)]->gt_box);
        gt_wh[static_cast<size_t>(2 * b)] = batch[static_cast<size_t>(b)]->gt_box.w;
        gt_wh[static_cast<size_t>(2 * b + 1)] = batch[static_cast<size_t>(b)]->gt_box.h;
    }

    // p = heatmap at the ground-truth cell; focal: -(1-p)^2 log(p)
    Tensor p = gather_rows(reshape(pred.heatmap, {B, Ls, 1}), cells);  // [B,1]
    Tensor q = sub(Tensor::ones({B, 1}), p);
    Tensor focal = neg(mul(mul(q, q), log(add(p, Tensor::full({B, 1}, 1e-12)))));
    Tensor heat_loss = scale(sum(focal), 1.0 / static_cast<double>(B));

    Tensor gt = Tensor::from_vector({B, 2}, std::move(gt_wh));
    Tensor l1 = sum(abs(sub(pred.box_wh, gt)));
    Tensor size_loss =
        scale(l1, 1.0 / (2.0 * static_cast<double>(B) * static_cast<double>(model.config().search_size)));

    return add(heat_loss, scale(size_loss, kSizeLossWeight));
}

namespace {
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
}  // namespace

EvalStats evaluate(const AinetModel& model, const std::vector<TrackSample>& samples) {
    autograd::NoGradGuard ng;
    EvalStats stats;
    if (samples.empty()) return stats;
    std::array<double, 3> sum_iou = {0, 0, 0};
    for (const auto& s : samples) {
        std::vector<const TrackSample*> batch = {&s};
        Prediction pred = model.forward(batch);
        const double v = iou(pred.decode(model.config(), 0), s.gt_box);
        const size_t r = static_cast<size_t>(s.regime);
        sum_iou[r] += v;
        ++stats.regime_count[r];
    }
    double total = 0;
    int64_t count = 0;
    for (size_t r = 0; r < 3; ++r) {
        total += sum_iou[r];
        count += stats.regime_count[r];
        stats.regime_iou[r] = stats.regime_count[r] ? sum_iou[r] / stats.regime_count[r] : 0.0;
    }
    stats.mean_iou = count ? total / static_cast<double>(count) : 0.0;
    return stats;
}

TrainResult train_model(AinetModel& model, const std::vector<TrackSample>& train_set,
                        const std::vector<TrackSample>& test_set, std::ostream* metrics) {
    const PipelineConfig& cfg = model.config();
    check(!train_set.empty(), "train: empty training set");
    Adam opt(model.params(), cfg.lr);
    Rng order_rng(Rng::derive(cfg.seed, "train.order"));

    if (metrics) *metrics << "step,loss,mean_iou,iou_rgb_clear,iou_tir_clear,iou_both\n";

    TrainResult result;
    std::vector<int64_t> perm(train_set.size());
    std::iota(perm.begin(), perm.end(), 0);
    size_t cursor = perm.size();  // force an initial shuffle

    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<const TrackSample*> batch;
        std::vector<int64_t> cells;
        for (int64_t k = 0; k < cfg.batch_size; ++k) {
            if (cursor >= perm.size()) {
                for (size_t i = perm.size(); i > 1; --i)
                    std::swap(perm[i - 1], perm[static_cast<size_t>(order_rng.randint(
                                               static_cast<int64_t>(i)))]);
                cursor = 0;
            }
            batch.push_back(&train_set[static_cast<size_t>(perm[cursor++])]);
        }
        for (const auto* s : batch) cells.push_back(model.gt_cell(s->gt_box));

        model.params().zero_grads();
        Prediction pred = model.forward(batch, &cells);
        Tensor loss = training_loss(model, pred, batch);
        const double loss_v = loss.value();
        if (!std::isfinite(loss_v))
            fail("training diverged: loss is not finite at step " + std::to_string(step));
        if (step == 0) result.first_loss = loss_v;
        result.final_loss = loss_v;
        backward(loss);
        opt.clip_grad_norm(kGradClip);
        opt.lr = lr_at(cfg.lr, step, cfg.steps);
        opt.step();

        const bool eval_now = !test_set.empty() && cfg.eval_every > 0 &&
                              ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps);
        if (metrics) {
            *metrics << (step + 1) << "," << fmt_double(loss_v);
            if (eval_now) {
                EvalStats ev = evaluate(model, test_set);
                result.final_eval = ev;
                *metrics << "," << fmt_double(ev.mean_iou) << "," << fmt_double(ev.regime_iou[0])
                         << "," << fmt_double(ev.regime_iou[1]) << ","
                         << fmt_double(ev.regime_iou[2]);
            } else {
                *metrics << ",,,,";
            }
            *metrics << "\n";
        } else if (eval_now) {
            result.final_eval = evaluate(model, test_set);
        }
        ++result.steps_run;
    }
    if (test_set.empty()) result.final_eval = EvalStats{};
    return result;
}

TrainResult demo_train(const PipelineConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    check(!ec, "cannot create output directory " + out_dir + ": " + ec.message());

    auto train_set = generate_dataset(Rng::derive(cfg.seed, "train.data"), cfg.train_sequences,
                                      cfg.frames_per_sequence, cfg);
    auto test_set = generate_dataset(Rng::derive(cfg.seed, "test.data"), cfg.test_sequences,
                                     cfg.frames_per_sequence, cfg);

    AinetModel model(cfg);
    const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    std::ofstream metrics(metrics_path, std::ios::trunc | std::ios::binary);
    check(metrics.good(), "cannot open " + metrics_path + " for writing");
    TrainResult result = train_model(model, train_set, test_set, &metrics);
    metrics.close();

    save_checkpoint(model.params(), (fs::path(out_dir) / "checkpoint").string());
    std::ofstream cfg_out((fs::path(out_dir) / "config.json").string(),
                          std::ios::trunc | std::ios::binary);
    cfg_out << config_to_json(cfg) << "\n";
    return result;
}

EvalStats demo_eval(const PipelineConfig& cfg, const std::string& run_dir) {
    AinetModel model(cfg);
    load_checkpoint(model.params(), (fs::path(run_dir) / "checkpoint").string());
    auto test_set = generate_dataset(Rng::derive(cfg.seed, "test.data"), cfg.test_sequences,
                                     cfg.frames_per_sequence, cfg);
    return evaluate(model, test_set);
}

}  // namespace ainet
