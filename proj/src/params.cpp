#include "ainet/params.hpp"

#include <cmath>

namespace ainet {

Tensor ParamStore::add(const std::string& name, Shape shape, Init init) {
    check(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back(Parameter{name, t, init});
    return t;
}

static void apply_init(Parameter& p, uint64_t seed) {
    auto& data = p.tensor.data();
    const Shape& shape = p.tensor.shape();
    Rng rng(Rng::derive(seed, p.name));
    switch (p.init.kind) {
        case Init::Kind::Zeros:
            std::fill(data.begin(), data.end(), 0.0);
            break;
        case Init::Kind::Ones:
            std::fill(data.begin(), data.end(), 1.0);
            break;
        case Init::Kind::Constant:
            std::fill(data.begin(), data.end(), p.init.a);
            break;
        case Init::Kind::Uniform:
            for (auto& v : data) v = rng.uniform(p.init.a, p.init.b);
            break;
        case Init::Kind::Normal:
            for (auto& v : data) v = rng.normal(p.init.a, p.init.b);
            break;
        case Init::Kind::ScaledUniform: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            for (auto& v : data) v = rng.uniform(-bound, bound);
            break;
        }
        case Init::Kind::S4dRealALog: {
            check(shape.size() == 2, "S4dRealALog init expects a [D,N] parameter");
            const int64_t D = shape[0], N = shape[1];
            for (int64_t d = 0; d < D; ++d)
                for (int64_t n = 0; n < N; ++n)
                    data[static_cast<size_t>(d * N + n)] = std::log(static_cast<double>(n + 1));
            break;
        }
        case Init::Kind::SoftplusInvDt: {
            // inverse softplus of a log-uniform draw in [dt_min, dt_max]
            const double lmin = std::log(p.init.a), lmax = std::log(p.init.b);
            for (auto& v : data) {
                const double dt = std::exp(rng.uniform(lmin, lmax));
                v = std::log(std::expm1(dt));
            }
            break;
        }
    }
}

void ParamStore::init_all(uint64_t seed) {
    for (auto& p : entries_) apply_init(p, seed);
}

void ParamStore::zero_grads() {
    for (auto& p : entries_) p.tensor.zero_grad();
}

int64_t ParamStore::scalar_count() const {
    int64_t n = 0;
    for (const auto& p : entries_) n += p.tensor.numel();
    return n;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "unknown parameter: " + name);
    return entries_[it->second].tensor;
}

Adam::Adam(ParamStore& store, double lr_in, double beta1, double beta2, double eps)
    : lr(lr_in), store_(store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : store.entries()) {
        m_.emplace_back(p.tensor.data().size(), 0.0);
        v_.emplace_back(p.tensor.data().size(), 0.0);
    }
}

double Adam::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& p : store_.entries()) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : store_.entries()) {
            if (!p.tensor.has_grad()) continue;
            Tensor t = p.tensor;
            for (auto& g : t.grad()) g *= s;
        }
    }
    return norm;
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& entries = store_.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        auto& p = entries[i];
        if (!p.tensor.has_grad()) continue;
        const auto& g = p.tensor.grad();
        auto& data = p.tensor.data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < data.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace ainet
