#pragma once

#include <functional>

#include "ainet/mamba.hpp"
#include "ainet/pipeline.hpp"

// Test-only reference implementations, deliberately independent of the
// library's execution paths (own loops, own scalar math), plus the central
// finite-difference gradient checker. Used by the test binaries, the
// acceptance suite and the CLI's `oracle` / `gradcheck` subcommands.
namespace ainet::oracle {

// exp via scaling-and-squaring of a short Taylor series; no std::exp
double exp_series(double x);

// ZOH closed form (exp(dt*a)-1)/a * b with the |dt*a| < 1e-8 -> dt*b guard
double zoh_abar_ref(double a, double dt);
double zoh_bbar_ref(double a, double dt, double b);

// scalar triple-loop matrix product, row-major
std::vector<double> matmul_ref(const std::vector<double>& a, int64_t m, int64_t k,
                               const std::vector<double>& b, int64_t n);

// naive trailing-dimension broadcast of a binary op via full multi-indexing
std::vector<double> broadcast_binary_ref(char op, const std::vector<double>& a, const Shape& sa,
                                         const std::vector<double>& b, const Shape& sb,
                                         const Shape& out_shape);

// kernel K[d][j] = sum_n c[n] * a_bar[d,n]^j * b_bar[d,n] via repeated
// elementwise multiplication
std::vector<double> conv_kernel_power_ref(const std::vector<double>& a_bar,
                                          const std::vector<double>& b_bar, int64_t D, int64_t N,
                                          const std::vector<double>& c, int64_t len);

// literal per-step selective scan: materializes per-step Abar/Bbar, then the
// recurrence, exactly as written in the discretize-then-step definition
std::vector<double> selective_scan_ref(const std::vector<double>& u,
                                       const std::vector<double>& delta,
                                       const std::vector<double>& a,
                                       const std::vector<double>& bp,
                                       const std::vector<double>& cp,
                                       const std::vector<double>& d_skip, int64_t B, int64_t L,
                                       int64_t D, int64_t N);

// step-by-step scalar Mamba block forward, parameters read from the store by
// name; independent of MambaBlock::forward
std::vector<double> mamba_slow_ref(const ParamStore& store, const std::string& prefix,
                                   const MambaBlockConfig& cfg, const std::vector<double>& x,
                                   int64_t B, int64_t L);

// scalar OFM branch core (conv -> silu -> S6) on the canonical input order
std::vector<double> ofm_branch_slow_ref(const ParamStore& store, const std::string& prefix,
                                        const OfmConfig& cfg, const std::vector<double>& f,
                                        int64_t B);

// ---------------------------------------------------------------------------
// finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckSpec {
    // Rebuilds the loss graph from the current leaf values on every call.
    std::function<Tensor()> make_loss;
    std::vector<Tensor> leaves;  // requires_grad tensors to check
    double h = 1e-5;
    double tol = 1e-4;
    int64_t samples_per_leaf = 20;
};

struct CheckOutcome {
    std::string name;
    bool pass = false;
    double max_err = 0.0;  // worst relative error (gradcheck) or abs diff (oracle)
    double tol = 0.0;
    std::string detail;
};

CheckOutcome run_gradcheck(const std::string& name, const GradCheckSpec& spec, Rng& rng);

// All module gradient suites (per-op + composite graphs). Every entry must
// pass for the `gradcheck` CLI to exit 0.
std::vector<CheckOutcome> gradcheck_suite(uint64_t seed);

// Oracle-equivalence suites (ZOH, scan equivalences, slow-path references).
std::vector<CheckOutcome> oracle_suite(uint64_t seed);

bool all_pass(const std::vector<CheckOutcome>& outcomes);

}  // namespace ainet::oracle
