#include <cmath>

#include "ainet/oracle.hpp"

namespace ainet::oracle {

namespace {

// Weighted-sum loss over an op output keeps every output coordinate active
// with a distinct gradient.
GradCheckSpec weighted(std::function<Tensor()> fwd, std::vector<Tensor> leaves, Rng& rng,
                       double tol = 1e-4, double h = 1e-5) {
    Tensor probe;
    {
        autograd::NoGradGuard ng;
        probe = fwd();
    }
    Tensor w = Tensor::randn(probe.shape(), rng, 1.0);
    GradCheckSpec spec;
    spec.make_loss = [fwd = std::move(fwd), w] { return sum(mul(fwd(), w)); };
    spec.leaves = std::move(leaves);
    spec.tol = tol;
    spec.h = h;
    return spec;
}

Tensor leaf_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t = Tensor::rand_uniform(std::move(shape), rng, lo, hi);
    t.set_requires_grad(true);
    return t;
}

// magnitudes in [0.3, 2] with mixed signs; keeps |x| away from kinks
Tensor leaf_signed(Shape shape, Rng& rng) {
    Tensor t = Tensor::rand_uniform(std::move(shape), rng, 0.3, 2.0);
    for (size_t i = 0; i < t.data().size(); ++i)
        if (i % 2 == 0) t.data()[i] = -t.data()[i];
    t.set_requires_grad(true);
    return t;
}

}  // namespace

std::vector<CheckOutcome> gradcheck_suite(uint64_t seed) {
    Rng rng(Rng::derive(seed, "gradcheck"));
    std::vector<CheckOutcome> out;
    auto run = [&](const std::string& name, const GradCheckSpec& spec) {
        out.push_back(run_gradcheck(name, spec, rng));
    };

    // --- elementwise binary, with broadcasting ---
    {
        Tensor a = leaf_uniform({2, 3, 4}, rng, -2, 2);
        Tensor b = leaf_uniform({4}, rng, -2, 2);
        run("op.add", weighted([=] { return add(a, b); }, {a, b}, rng));
        run("op.sub", weighted([=] { return sub(a, b); }, {a, b}, rng));
        run("op.mul", weighted([=] { return mul(a, b); }, {a, b}, rng));
    }
    {
        // the spec's tighter mul example: h=1e-6, rel < 1e-6 on same-shape inputs
        Tensor a = leaf_uniform({3, 4}, rng, -2, 2);
        Tensor b = leaf_uniform({3, 4}, rng, -2, 2);
        run("op.mul.tight", weighted([=] { return mul(a, b); }, {a, b}, rng, 1e-6, 1e-6));
    }

    // --- elementwise unary ---
    {
        Tensor x = leaf_uniform({2, 5}, rng, -2, 2);
        run("op.scale", weighted([=] { return scale(x, -1.7); }, {x}, rng));
        run("op.tanh", weighted([=] { return tanh(x); }, {x}, rng));
        run("op.silu", weighted([=] { return silu(x); }, {x}, rng));
        run("op.softplus", weighted([=] { return softplus(x); }, {x}, rng));
        run("op.exp", weighted([=] { return exp(x); }, {x}, rng));
        run("op.sigmoid", weighted([=] { return sigmoid(x); }, {x}, rng));
        run("op.phi1", weighted([=] { return phi1(x); }, {x}, rng));
    }
    {
        Tensor x = leaf_uniform({2, 5}, rng, 0.5, 2.5);
        run("op.log", weighted([=] { return log(x); }, {x}, rng));
    }
    {
        Tensor x = leaf_signed({2, 5}, rng);
        run("op.abs", weighted([=] { return abs(x); }, {x}, rng));
    }

    // --- matmul ---
    {
        Tensor a = leaf_uniform({2, 3, 4}, rng, -2, 2);
        Tensor b = leaf_uniform({4, 5}, rng, -2, 2);
        run("op.matmul.broadcast", weighted([=] { return matmul(a, b); }, {a, b}, rng));
        Tensor b2 = leaf_uniform({2, 4, 5}, rng, -2, 2);
        run("op.matmul.batched", weighted([=] { return matmul(a, b2); }, {a, b2}, rng));
    }

    // --- normalization / reductions ---
    {
        Tensor x = leaf_uniform({3, 6}, rng, -2, 2);
        Tensor g = leaf_uniform({6}, rng, 0.5, 1.5);
        Tensor b = leaf_uniform({6}, rng, -0.5, 0.5);
        run("op.layer_norm",
            weighted([=] { return layer_norm(x, g, b); }, {x, g, b}, rng, 1e-5));
        run("op.softmax", weighted([=] { return softmax(x); }, {x}, rng));
        run("op.sum", weighted([=] { return sum(x); }, {x}, rng));
        run("op.sum_axis", weighted([=] { return sum(x, 1); }, {x}, rng));
        run("op.mean_axis", weighted([=] { return mean(x, 0); }, {x}, rng));
    }

    // --- structure ops ---
    {
        Tensor a = leaf_uniform({2, 3}, rng, -2, 2);
        Tensor b = leaf_uniform({2, 2}, rng, -2, 2);
        run("op.concat", weighted([=] { return concat({a, b}, 1); }, {a, b}, rng));
    }
    {
        Tensor x = leaf_uniform({2, 5}, rng, -2, 2);
        run("op.split", weighted(
                            [=] {
                                auto parts = split(x, {2, 3}, 1);
                                return concat({parts[1], parts[0]}, 1);
                            },
                            {x}, rng));
        run("op.reshape", weighted([=] { return reshape(x, {5, 2}); }, {x}, rng));
    }
    {
        Tensor x = leaf_uniform({2, 3, 4}, rng, -2, 2);
        run("op.transpose_last", weighted([=] { return transpose_last(x); }, {x}, rng));
    }
    {
        Tensor x = leaf_uniform({2, 5, 3}, rng, -2, 2);
        std::vector<int64_t> rows = {1, 4};
        run("op.gather_rows", weighted([=] { return gather_rows(x, rows); }, {x}, rng));
        run("op.slice_tokens", weighted([=] { return slice_tokens(x, 2, 2); }, {x}, rng));
    }
    {
        Tensor x = leaf_uniform({2, 6, 2}, rng, -2, 2);
        std::vector<std::vector<int64_t>> order = {{2, 0, 1}, {1, 2, 0}};
        run("op.reorder_blocks",
            weighted([=] { return reorder_blocks(x, order, 2); }, {x}, rng));
    }

    // --- sequence kernels ---
    {
        Tensor x = leaf_uniform({2, 6, 3}, rng, -2, 2);
        Tensor w = leaf_uniform({3, 3}, rng, -1, 1);
        Tensor b = leaf_uniform({3}, rng, -0.5, 0.5);
        run("op.causal_dwconv1d",
            weighted([=] { return causal_dwconv1d(x, w, b); }, {x, w, b}, rng));
    }
    {
        Tensor u = leaf_uniform({1, 5, 3}, rng, -2, 2);
        Tensor delta = leaf_uniform({1, 5, 3}, rng, 0.05, 0.5);
        Tensor a = leaf_uniform({3, 4}, rng, -2.0, -0.1);
        Tensor bp = leaf_uniform({1, 5, 4}, rng, -1, 1);
        Tensor cp = leaf_uniform({1, 5, 4}, rng, -1, 1);
        Tensor sk = leaf_uniform({3}, rng, -1, 1);
        run("op.selective_scan",
            weighted([=] { return selective_scan(u, delta, a, bp, cp, sk); },
                     {u, delta, a, bp, cp, sk}, rng));
    }

    // --- ZOH discretization ---
    {
        SsmParams p;
        p.a_log = leaf_uniform({3, 4}, rng, -1, 1);
        p.b = leaf_uniform({4}, rng, -1, 1);
        p.delta = leaf_uniform({1}, rng, 0.2, 0.6);
        Tensor wa = Tensor::randn({3, 4}, rng, 1.0);
        Tensor wb = Tensor::randn({3, 4}, rng, 1.0);
        GradCheckSpec spec;
        spec.make_loss = [=] {
            auto d = discretize_zoh(p);
            return add(sum(mul(d.a_bar, wa)), sum(mul(d.b_bar, wb)));
        };
        spec.leaves = {p.a_log, p.b, p.delta};
        run("ssm.discretize_zoh", spec);
    }

    // --- mamba block (1,6,4) ---
    {
        ParamStore store;
        MambaBlockConfig cfg;
        cfg.model_dim = 4;
        cfg.state_size = 5;
        MambaBlock block(store, "mamba", cfg);
        store.init_all(Rng::derive(seed, "gc.mamba"));
        Tensor x = leaf_uniform({1, 6, 4}, rng, -1.5, 1.5);
        std::vector<Tensor> leaves = {x};
        for (const auto& p : store.entries()) leaves.push_back(p.tensor);
        auto spec = weighted([&block, x] { return block.forward(x); }, leaves, rng);
        spec.samples_per_leaf = 6;
        run("mamba.forward", spec);
    }

    // --- dfm (1,4,4), end to end ---
    {
        ParamStore store;
        DfmConfig cfg;
        cfg.channels = 4;
        cfg.mamba.model_dim = 4;
        cfg.mamba.state_size = 4;
        Dfm dfm(store, "dfm.0", cfg);
        store.init_all(Rng::derive(seed, "gc.dfm"));
        Tensor xr = leaf_uniform({1, 4, 4}, rng, -1.5, 1.5);
        Tensor xt = leaf_uniform({1, 4, 4}, rng, -1.5, 1.5);
        Tensor w1 = Tensor::randn({1, 4, 4}, rng, 1.0);
        Tensor w2 = Tensor::randn({1, 4, 4}, rng, 1.0);
        Tensor w3 = Tensor::randn({1, 4, 4}, rng, 1.0);
        GradCheckSpec spec;
        spec.make_loss = [&dfm, xr, xt, w1, w2, w3] {
            auto o = dfm.forward(xr, xt);
            return add(add(sum(mul(o.x_rgb_hat, w1)), sum(mul(o.x_tir_hat, w2))),
                       sum(mul(o.x_dfm, w3)));
        };
        spec.leaves = {xr, xt};
        for (const auto& p : store.entries()) spec.leaves.push_back(p.tensor);
        spec.tol = 1e-3;
        spec.samples_per_leaf = 5;
        run("dfm.forward", spec);
    }

    // --- ofm (N=2, L=3, C=4), through values (the order is discrete) ---
    {
        ParamStore store;
        OfmConfig cfg;
        cfg.channels = 4;
        cfg.num_layers = 2;
        cfg.tokens_per_layer = 3;
        cfg.state_size = 4;
        Ofm ofm(store, "ofm", cfg);
        store.init_all(Rng::derive(seed, "gc.ofm"));
        Tensor f0 = leaf_uniform({1, 3, 4}, rng, -1.5, 1.5);
        Tensor f1 = leaf_uniform({1, 3, 4}, rng, -1.5, 1.5);
        Tensor w = Tensor::randn({1, 3, 4}, rng, 1.0);
        GradCheckSpec spec;
        spec.make_loss = [&ofm, f0, f1, w] {
            LayerStack stack;
            stack.layers = {f0, f1};
            return sum(mul(ofm.forward(stack), w));
        };
        spec.leaves = {f0, f1};
        for (const auto& p : store.entries()) spec.leaves.push_back(p.tensor);
        spec.tol = 1e-3;
        spec.samples_per_leaf = 5;
        run("ofm.forward", spec);
    }

    // --- composite DFM -> OFM graph ---
    {
        ParamStore store;
        DfmConfig dc;
        dc.channels = 4;
        dc.mamba.model_dim = 4;
        dc.mamba.state_size = 4;
        Dfm dfm0(store, "dfm.0", dc);
        Dfm dfm1(store, "dfm.1", dc);
        OfmConfig oc;
        oc.channels = 4;
        oc.num_layers = 2;
        oc.tokens_per_layer = 3;
        oc.state_size = 4;
        Ofm ofm(store, "ofm", oc);
        store.init_all(Rng::derive(seed, "gc.composite"));
        Tensor xr = leaf_uniform({1, 3, 4}, rng, -1.0, 1.0);
        Tensor xt = leaf_uniform({1, 3, 4}, rng, -1.0, 1.0);
        Tensor w = Tensor::randn({1, 3, 4}, rng, 1.0);
        GradCheckSpec spec;
        spec.make_loss = [&, xr, xt, w] {
            auto o0 = dfm0.forward(xr, xt);
            auto o1 = dfm1.forward(o0.x_rgb_hat, o0.x_tir_hat);
            LayerStack stack;
            stack.layers = {o0.x_dfm, o1.x_dfm};
            return sum(mul(ofm.forward(stack), w));
        };
        spec.leaves = {xr, xt};
        for (const auto& p : store.entries()) spec.leaves.push_back(p.tensor);
        spec.tol = 1e-3;
        spec.samples_per_leaf = 3;
        run("composite.dfm_ofm", spec);
    }

    // --- full pipeline micro config (N=2, C=8, L=20) ---
    {
        PipelineConfig cfg;
        cfg.num_layers = 2;
        cfg.channels = 8;
        cfg.search_size = 16;
        cfg.template_size = 8;
        cfg.patch = 4;  // 16 + 4 = 20 tokens
        cfg.fusion_mode = FusionMode::DfmOfm;
        cfg.seed = Rng::derive(seed, "gc.pipeline");
        AinetModel model(cfg);
        auto data = generate_dataset(cfg.seed, 1, 2, cfg);
        std::vector<const TrackSample*> batch = {&data[0]};
        std::vector<int64_t> cells = {model.gt_cell(data[0].gt_box)};
        GradCheckSpec spec;
        spec.make_loss = [&model, batch, cells] {
            Prediction pred = model.forward(batch, &cells);
            return training_loss(model, pred, batch);
        };
        for (const auto& p : model.params().entries()) spec.leaves.push_back(p.tensor);
        spec.tol = 1e-3;
        spec.samples_per_leaf = 2;
        run("pipeline.micro", spec);
    }

    return out;
}

// ---------------------------------------------------------------------------
// oracle equivalence suite
// ---------------------------------------------------------------------------

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    check(a.size() == b.size(), "max_abs_diff: size mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

CheckOutcome outcome(const std::string& name, double err, double tol) {
    CheckOutcome o;
    o.name = name;
    o.max_err = err;
    o.tol = tol;
    o.pass = err < tol || (tol == 0.0 && err == 0.0);
    return o;
}

}  // namespace

std::vector<CheckOutcome> oracle_suite(uint64_t seed) {
    Rng rng(Rng::derive(seed, "oracle"));
    std::vector<CheckOutcome> out;

    // ZOH vs series-exponential oracle: 100 random scalars + the A->0 case
    {
        double err = 0.0;
        SsmParams p;
        p.a_log = Tensor::rand_uniform({10, 10}, rng, -3.0, 1.6);
        p.b = Tensor::rand_uniform({10}, rng, -1.0, 1.0);
        p.delta = Tensor::from_vector({1}, {rng.uniform(0.01, 1.0)});
        auto d = discretize_zoh(p);
        const double dt = p.delta.value();
        for (int64_t i = 0; i < 100; ++i) {
            const double a = -std::exp(p.a_log.data()[static_cast<size_t>(i)]);
            const double b = p.b.data()[static_cast<size_t>(i % 10)];
            err = std::max(err, std::fabs(d.a_bar.data()[static_cast<size_t>(i)] -
                                          zoh_abar_ref(a, dt)));
            err = std::max(err, std::fabs(d.b_bar.data()[static_cast<size_t>(i)] -
                                          zoh_bbar_ref(a, dt, b)));
        }
        // A -> 0: a_log = -25 puts |dt*A| below the 1e-8 guard
        SsmParams pz;
        pz.a_log = Tensor::full({1, 1}, -25.0);
        pz.b = Tensor::from_vector({1}, {0.8});
        pz.delta = Tensor::from_vector({1}, {0.5});
        auto dz = discretize_zoh(pz);
        err = std::max(err, std::fabs(dz.b_bar.value() - 0.5 * 0.8));
        err = std::max(err, std::fabs(dz.a_bar.value() - zoh_abar_ref(-std::exp(-25.0), 0.5)));
        out.push_back(outcome("oracle.zoh_vs_expm", err, 1e-12));
    }

    // Eq.3 recurrence vs Eq.4 kernel form: 50 random LTI instances
    {
        double err = 0.0;
        for (int inst = 0; inst < 50; ++inst) {
            const int64_t D = 4, N = 16, L = 64;
            SsmParams p;
            p.a_log = Tensor::rand_uniform({D, N}, rng, -1.5, 1.5);
            p.b = Tensor::rand_uniform({N}, rng, -1.0, 1.0);
            p.c = Tensor::rand_uniform({N}, rng, -1.0, 1.0);
            p.delta = Tensor::from_vector({1}, {rng.uniform(0.05, 0.5)});
            p.d_skip = Tensor::rand_uniform({D}, rng, -1.0, 1.0);
            auto d = discretize_zoh(p);
            Tensor x = Tensor::rand_uniform({1, L, D}, rng, -2.0, 2.0);
            Tensor y_rec = recurrent_scan(d, p.c, x, p.d_skip);
            Tensor y_conv = conv_scan(conv_kernel(d, p.c, L), x, p.d_skip);
            err = std::max(err, max_abs_diff(y_rec.data(), y_conv.data()));
        }
        out.push_back(outcome("oracle.lti_recurrent_vs_conv", err, 1e-8));
    }

    // conv kernel vs repeated elementwise-multiplication oracle
    {
        SsmParams p;
        p.a_log = Tensor::rand_uniform({3, 6}, rng, -1.5, 1.0);
        p.b = Tensor::rand_uniform({6}, rng, -1.0, 1.0);
        p.c = Tensor::rand_uniform({6}, rng, -1.0, 1.0);
        p.delta = Tensor::from_vector({1}, {0.2});
        auto d = discretize_zoh(p);
        Tensor k = conv_kernel(d, p.c, 12);
        auto ref = conv_kernel_power_ref(d.a_bar.data(), d.b_bar.data(), 3, 6, p.c.data(), 12);
        out.push_back(outcome("oracle.conv_kernel_power", max_abs_diff(k.data(), ref), 1e-12));
    }

    // selective scan: fused path vs per-step loop, 20 seeds at (2,32,8,16)
    {
        double err = 0.0;
        for (int s = 0; s < 20; ++s) {
            Rng r2(Rng::derive(seed, "oracle.sel." + std::to_string(s)));
            const int64_t B = 2, L = 32, D = 8, N = 16;
            Tensor u = Tensor::rand_uniform({B, L, D}, r2, -2.0, 2.0);
            Tensor delta = Tensor::rand_uniform({B, L, D}, r2, 0.01, 0.3);
            Tensor a_log = Tensor::rand_uniform({D, N}, r2, -2.0, 1.0);
            Tensor a = Tensor::zeros({D, N});
            for (size_t i = 0; i < a.data().size(); ++i) a.data()[i] = -std::exp(a_log.data()[i]);
            Tensor bp = Tensor::rand_uniform({B, L, N}, r2, -1.0, 1.0);
            Tensor cp = Tensor::rand_uniform({B, L, N}, r2, -1.0, 1.0);
            Tensor sk = Tensor::rand_uniform({D}, r2, -1.0, 1.0);
            Tensor y = selective_scan(u, delta, a, bp, cp, sk);
            auto ref = selective_scan_ref(u.data(), delta.data(), a.data(), bp.data(), cp.data(),
                                          sk.data(), B, L, D, N);
            err = std::max(err, max_abs_diff(y.data(), ref));
        }
        out.push_back(outcome("oracle.selective_vs_naive", err, 1e-10));
    }

    // mamba block vs step-by-step scalar reimplementation at (1,8,4)
    {
        ParamStore store;
        MambaBlockConfig cfg;
        cfg.model_dim = 4;
        MambaBlock block(store, "m", cfg);
        store.init_all(Rng::derive(seed, "oracle.mamba"));
        Tensor x = Tensor::rand_uniform({1, 8, 4}, rng, -2.0, 2.0);
        Tensor y = block.forward(x);
        auto ref = mamba_slow_ref(store, "m", cfg, x.data(), 1, 8);
        out.push_back(outcome("oracle.mamba_slow", max_abs_diff(y.data(), ref), 1e-10));
    }

    // ofm forward branch vs scalar branch reference at (1, 2*4, 3)
    {
        ParamStore store;
        OfmConfig cfg;
        cfg.channels = 3;
        cfg.num_layers = 2;
        cfg.tokens_per_layer = 4;
        cfg.state_size = 4;
        Ofm ofm(store, "ofm", cfg);
        store.init_all(Rng::derive(seed, "oracle.ofm"));
        Tensor f = Tensor::rand_uniform({1, 8, 3}, rng, -2.0, 2.0);
        Tensor y = ofm.scan_branch(f, ScanDirection::Forward);
        auto ref = ofm_branch_slow_ref(store, "ofm.branch", cfg, f.data(), 1);
        out.push_back(outcome("oracle.ofm_branch_naive", max_abs_diff(y.data(), ref), 1e-10));
    }

    // matmul vs scalar triple loop at [4,5]x[5,3]
    {
        Tensor a = Tensor::rand_uniform({4, 5}, rng, -2.0, 2.0);
        Tensor b = Tensor::rand_uniform({5, 3}, rng, -2.0, 2.0);
        Tensor c = matmul(a, b);
        auto ref = matmul_ref(a.data(), 4, 5, b.data(), 3);
        out.push_back(outcome("oracle.matmul_triple_loop", max_abs_diff(c.data(), ref), 1e-12));
    }

    // broadcasting vs the naive multi-index reference, rank <= 4, exact
    {
        double err = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            const int rank_out = 1 + static_cast<int>(rng.randint(4));
            Shape so(static_cast<size_t>(rank_out));
            for (auto& d : so) d = 1 + rng.randint(4);
            auto sample_operand = [&](Shape& s) {
                const int r = 1 + static_cast<int>(rng.randint(rank_out));
                s.assign(static_cast<size_t>(r), 1);
                for (int i = 0; i < r; ++i) {
                    const int64_t od = so[static_cast<size_t>(rank_out - r + i)];
                    s[static_cast<size_t>(i)] = rng.uniform() < 0.4 ? 1 : od;
                }
            };
            Shape sa, sb;
            sample_operand(sa);
            sample_operand(sb);
            // rejection: operand pair must actually produce so
            Shape got;
            try {
                got = broadcast_shapes(sa, sb);
            } catch (const Error&) {
                continue;
            }
            if (got != so) continue;
            Tensor a = Tensor::rand_uniform(sa, rng, -2.0, 2.0);
            Tensor b = Tensor::rand_uniform(sb, rng, -2.0, 2.0);
            const char ops[3] = {'+', '-', '*'};
            const char op = ops[rng.randint(3)];
            Tensor y = op == '+' ? add(a, b) : op == '-' ? sub(a, b) : mul(a, b);
            auto ref = broadcast_binary_ref(op, a.data(), sa, b.data(), sb, so);
            err = std::max(err, max_abs_diff(y.data(), ref));
        }
        out.push_back(outcome("oracle.broadcast_naive", err, 0.0));
    }

    return out;
}

}  // namespace ainet::oracle
