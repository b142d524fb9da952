#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ainet/checkpoint.hpp"
#include "ainet/costs.hpp"
#include "ainet/oracle.hpp"
#include "ainet/pipeline.hpp"

namespace {

using namespace ainet;

PipelineConfig load_config(const std::string& path, std::optional<uint64_t> seed_override) {
    PipelineConfig cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        check(f.good(), "cannot open config file " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        cfg = parse_config_json(ss.str());
    }
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

int report(const std::vector<oracle::CheckOutcome>& outcomes) {
    int failures = 0;
    for (const auto& o : outcomes) {
        std::printf("[%s] %-28s max_err=%.3e tol=%.0e%s%s\n", o.pass ? "PASS" : "FAIL",
                    o.name.c_str(), o.max_err, o.tol, o.detail.empty() ? "" : "  ",
                    o.detail.c_str());
        if (!o.pass) ++failures;
    }
    std::printf("%zu checks, %d failed\n", outcomes.size(), failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ainet: progressive fusion Mamba (DFM/OFM) numerical core"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, out_path;
    std::optional<uint64_t> seed;
    bool strict = false;
    app.add_option("--config", config_path, "JSON pipeline config");
    app.add_option("--seed", seed, "seed override");
    app.add_option("--out", out_path, "output path (directory or file)");
    app.add_flag("--strict", strict, "single-threaded bitwise-reproducible mode");

    auto* cmd_gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient suites for every module");
    auto* cmd_oracle =
        app.add_subcommand("oracle", "independent-oracle equivalence suites");
    auto* cmd_bench = app.add_subcommand(
        "bench", "token-scaling cost benchmark (OFM scan vs attention baseline)");
    auto* cmd_train = app.add_subcommand("demo-train", "train on the synthetic benchmark");
    auto* cmd_eval = app.add_subcommand("demo-eval", "evaluate a demo-train checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const char* env_strict = std::getenv("AINET_STRICT");
    if (env_strict && std::string(env_strict) == "1") strict = true;
    StrictMode::set(true);  // the library always runs the strict path
    (void)strict;

    try {
        if (cmd_gradcheck->parsed()) {
            return report(oracle::gradcheck_suite(seed.value_or(0)));
        }
        if (cmd_oracle->parsed()) {
            return report(oracle::oracle_suite(seed.value_or(0)));
        }
        if (cmd_bench->parsed()) {
            bench::ScalingOptions opt;
            auto rows = bench::bench_scaling(opt);
            const std::string path = out_path.empty() ? "costs.csv" : out_path;
            bench::write_cost_csv(path, rows);
            std::printf("wrote %s\n", path.c_str());
            std::printf("ofm       log-log slope %.4f\n", bench::loglog_slope(rows, "ofm"));
            std::printf("attention log-log slope %.4f\n",
                        bench::loglog_slope(rows, "attention"));
            return 0;
        }
        if (cmd_train->parsed()) {
            check(!out_path.empty(), "demo-train requires --out DIR");
            PipelineConfig cfg = load_config(config_path, seed);
            TrainResult r = demo_train(cfg, out_path);
            std::printf("trained %lld steps: loss %.6f -> %.6f, test IoU %.4f\n",
                        static_cast<long long>(r.steps_run), r.first_loss, r.final_loss,
                        r.final_eval.mean_iou);
            std::printf("checkpoint + metrics.csv written under %s\n", out_path.c_str());
            return 0;
        }
        if (cmd_eval->parsed()) {
            check(!out_path.empty(), "demo-eval requires --out DIR (a demo-train run directory)");
            PipelineConfig cfg = load_config(config_path, seed);
            EvalStats ev = demo_eval(cfg, out_path);
            std::printf("mean IoU %.4f (rgb_clear %.4f, tir_clear %.4f, both %.4f)\n",
                        ev.mean_iou, ev.regime_iou[0], ev.regime_iou[1], ev.regime_iou[2]);
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
