#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ainet/tensor.hpp"

namespace ainet {

// Named initialization rule. Re-running init with the same seed reproduces
// bitwise-identical values: each parameter draws from its own stream seeded by
// (seed, name), so registration order does not matter.
struct Init {
    enum class Kind {
        Zeros,
        Ones,
        Constant,
        Uniform,        // U[a, b]
        Normal,         // N(a, b^2)
        ScaledUniform,  // U[-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = dim 0
        S4dRealALog,    // A_log[d][n] = log(n+1), so -A spans [1, N]
        SoftplusInvDt,  // bias with softplus(bias) log-uniform in [a, b]
    };
    Kind kind = Kind::Zeros;
    double a = 0.0;
    double b = 0.0;

    static Init zeros() { return {Kind::Zeros, 0, 0}; }
    static Init ones() { return {Kind::Ones, 0, 0}; }
    static Init constant(double v) { return {Kind::Constant, v, 0}; }
    static Init uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
    static Init normal(double mean, double stddev) { return {Kind::Normal, mean, stddev}; }
    static Init scaled_uniform() { return {Kind::ScaledUniform, 0, 0}; }
    static Init s4d_real_a_log() { return {Kind::S4dRealALog, 0, 0}; }
    static Init softplus_inv_dt(double dt_min, double dt_max) {
        return {Kind::SoftplusInvDt, dt_min, dt_max};
    }
};

struct Parameter {
    std::string name;
    Tensor tensor;
    Init init;
};

// Flat registry of named parameters; modules register tensors here and keep
// the returned handles. Names must be unique.
class ParamStore {
public:
    Tensor add(const std::string& name, Shape shape, Init init);

    // (Re)apply every parameter's init rule from `seed`.
    void init_all(uint64_t seed);

    void zero_grads();

    int64_t scalar_count() const;
    size_t size() const { return entries_.size(); }
    const std::vector<Parameter>& entries() const { return entries_; }
    std::vector<Parameter>& entries() { return entries_; }
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor get(const std::string& name) const;

    void save(const std::string& dir) const;
    void load(const std::string& dir);

private:
    std::vector<Parameter> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Plain Adam on a ParamStore; deterministic, single-threaded.
class Adam {
public:
    explicit Adam(ParamStore& store, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step();
    // Scales grads so their global L2 norm is at most max_norm; returns the
    // pre-clip norm.
    double clip_grad_norm(double max_norm);
    double lr;

private:
    ParamStore& store_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace ainet
