#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ainet/oracle.hpp"

using namespace ainet;

namespace {

struct Fixture {
    ParamStore store;
    std::unique_ptr<Ofm> ofm;
    OfmConfig cfg;
    Fixture(uint64_t seed, int64_t N, int64_t L, int64_t C, bool shared = true,
            bool ste = false) {
        cfg.channels = C;
        cfg.num_layers = N;
        cfg.tokens_per_layer = L;
        cfg.state_size = 4;
        cfg.share_branch_params = shared;
        cfg.straight_through = ste;
        ofm = std::make_unique<Ofm>(store, "ofm", cfg);
        store.init_all(seed);
    }
    LayerStack stack(Rng& rng, int64_t B = 1) const {
        LayerStack s;
        for (int64_t i = 0; i < cfg.num_layers; ++i)
            s.layers.push_back(Tensor::randn({B, cfg.tokens_per_layer, cfg.channels}, rng, 0.7));
        return s;
    }
};

double solve_silu_inverse(double target) {
    double lo = 0.0, hi = 5.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double v = mid / (1.0 + std::exp(-mid));
        (v < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("layer stacks validate shape agreement") {
    LayerStack s;
    s.layers = {Tensor::zeros({1, 4, 3}), Tensor::zeros({1, 5, 3})};
    CHECK_THROWS_AS(s.validate(), Error);
    s.layers[1] = Tensor::zeros({1, 4, 3});
    CHECK(s.concatenated().shape() == Shape{1, 8, 3});
}

TEST_CASE("token count must divide into layers") {
    Fixture fx(1, 2, 4, 3);
    CHECK_THROWS_AS(fx.ofm->scan_branch(Tensor::zeros({1, 7, 3}), ScanDirection::Forward), Error);
}

TEST_CASE("N=1: forward and backward branches coincide under shared parameters") {
    Fixture fx(2, 1, 6, 3);
    Rng rng(3);
    Tensor f = Tensor::randn({2, 6, 3}, rng);
    Tensor yf = fx.ofm->scan_branch(f, ScanDirection::Forward);
    Tensor yb = fx.ofm->scan_branch(f, ScanDirection::Backward);
    CHECK(yf.data() == yb.data());
}

TEST_CASE("backward branch is a relabeling of the forward branch") {
    Fixture fx(4, 3, 4, 3);
    Rng rng(5);
    Tensor f = Tensor::randn({1, 12, 3}, rng);
    auto rev = ScanOrder::reversal(1, 3);
    // backward(rev(F)) un-reordered once more equals forward(F), bitwise
    Tensor lhs = reorder_blocks(fx.ofm->scan_branch(reorder_blocks(f, rev.index, 4),
                                                    ScanDirection::Backward),
                                rev.index, 4);
    Tensor rhs = fx.ofm->scan_branch(f, ScanDirection::Forward);
    CHECK(lhs.data() == rhs.data());
}

TEST_CASE("forward branch matches the naive scalar loop") {
    for (const auto& o : oracle::oracle_suite(6)) {
        if (o.name == "oracle.ofm_branch_naive") {
            INFO("max_abs_diff=", o.max_err);
            CHECK(o.pass);
            return;
        }
    }
    FAIL("missing ofm branch oracle");
}

TEST_CASE("zero predictor weights give the identity order by tie-break") {
    Fixture fx(0, 4, 3, 3);
    for (auto& p : fx.store.entries())  // zero every parameter
        std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    Rng rng(7);
    Tensor f = Tensor::randn({2, 12, 3}, rng);
    ScanOrder order = fx.ofm->predict_scan_order(f);
    for (const auto& ord : order.index) CHECK(ord == std::vector<int64_t>{0, 1, 2, 3});
}

TEST_CASE("hand-set weights: logits (0.1, 0.9, 0.5) give index (1, 2, 0)") {
    Fixture fx(8, 3, 4, 4);
    auto& store = fx.store;
    // MLP = identity + SiLU, FC picks channel 0: logit_j = silu(mean of layer j's channel 0)
    auto set = [&](const std::string& name, const std::vector<double>& v) {
        Tensor t = store.get(name);
        REQUIRE(t.data().size() == v.size());
        t.data() = v;
    };
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[static_cast<size_t>(i * 4 + i)] = 1.0;
    set("ofm.order.mlp.weight", eye);
    set("ofm.order.mlp.bias", {0, 0, 0, 0});
    set("ofm.order.fc.weight", {1, 0, 0, 0});
    set("ofm.order.fc.bias", {0});

    // constant layers whose channel-0 means hit the requested logits exactly
    LayerStack s;
    for (double target : {0.1, 0.9, 0.5}) {
        Tensor layer = Tensor::zeros({1, 4, 4});
        const double v = solve_silu_inverse(target);
        for (int64_t t = 0; t < 4; ++t) layer.set({0, t, 0}, v);
        s.layers.push_back(layer);
    }
    Tensor f = s.concatenated();
    Tensor logits = fx.ofm->order_logits(f);
    CHECK(logits.at({0, 0}) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(logits.at({0, 1}) == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(logits.at({0, 2}) == doctest::Approx(0.5).epsilon(1e-9));
    ScanOrder order = fx.ofm->predict_scan_order(f);
    CHECK(order.index[0] == std::vector<int64_t>{1, 2, 0});
}

TEST_CASE("1000 random order predictions are always valid permutations") {
    Fixture fx(9, 5, 2, 3);
    Rng rng(10);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor f = Tensor::randn({1, 10, 3}, rng, 2.0);
        ScanOrder order = fx.ofm->predict_scan_order(f);
        REQUIRE(order.valid(5));
        auto sorted = order.index[0];
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::vector<int64_t>{0, 1, 2, 3, 4});
    }
}

TEST_CASE("reorder_blocks: identity, reversal and inverse round trip") {
    Rng rng(11);
    Tensor f = Tensor::randn({2, 12, 3}, rng);
    auto id = ScanOrder::identity(2, 3);
    CHECK(reorder_blocks(f, id.index, 4).data() == f.data());

    auto rev = ScanOrder::reversal(2, 3);
    Tensor r = reorder_blocks(f, rev.index, 4);
    // block j of the reversed tensor is block N-1-j of the original
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t t = 0; t < 4; ++t)
                for (int64_t c = 0; c < 3; ++c)
                    CHECK(r.at({b, j * 4 + t, c}) == f.at({b, (2 - j) * 4 + t, c}));

    ScanOrder perm;
    perm.index = {{2, 0, 1}, {1, 2, 0}};
    Tensor round = reorder_blocks(reorder_blocks(f, perm.index, 4), perm.inverse().index, 4);
    CHECK(round.data() == f.data());
}

TEST_CASE("invalid permutations are rejected") {
    Tensor f = Tensor::zeros({1, 12, 3});
    CHECK_THROWS_AS(reorder_blocks(f, {{0, 1, 1}}, 4), Error);
    CHECK_THROWS_AS(reorder_blocks(f, {{0, 1, 3}}, 4), Error);
    CHECK_THROWS_AS(reorder_blocks(f, {{0, 1}}, 4), Error);
}

TEST_CASE("marker tokens move as whole blocks through reorder") {
    const int64_t N = 4, L = 5, C = 2;
    Tensor f = Tensor::zeros({1, N * L, C});
    for (int64_t j = 0; j < N; ++j)
        for (int64_t t = 0; t < L; ++t)
            for (int64_t c = 0; c < C; ++c) f.set({0, j * L + t, c}, 10.0 * (j + 1));
    ScanOrder perm;
    perm.index = {{3, 1, 0, 2}};
    Tensor r = reorder_blocks(f, perm.index, L);
    for (int64_t j = 0; j < N; ++j) {
        const double expected = 10.0 * (perm.index[0][static_cast<size_t>(j)] + 1);
        for (int64_t t = 0; t < L; ++t)
            for (int64_t c = 0; c < C; ++c) CHECK(r.at({0, j * L + t, c}) == expected);
    }
}

TEST_CASE("zero parameters give the zero map") {
    Fixture fx(12, 3, 4, 3);
    for (auto& p : fx.store.entries())
        std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    Rng rng(13);
    auto stack = fx.stack(rng, 2);
    Tensor y = fx.ofm->forward(stack);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("output shape (2,320,32) from a 4-layer stack") {
    Fixture fx(14, 4, 320, 32);
    Rng rng(15);
    autograd::NoGradGuard ng;
    auto stack = fx.stack(rng, 2);
    Tensor y = fx.ofm->forward(stack);
    CHECK(y.shape() == Shape{2, 320, 32});
}

TEST_CASE("forward equals the explicit branch-by-branch composition") {
    Fixture fx(16, 3, 4, 4);
    Rng rng(17);
    auto stack = fx.stack(rng);
    Tensor y = fx.ofm->forward(stack);

    Tensor f = stack.concatenated();
    Tensor yf = fx.ofm->scan_branch(f, ScanDirection::Forward);
    Tensor yb = fx.ofm->scan_branch(f, ScanDirection::Backward);
    Tensor yd = fx.ofm->dynamic_branch(f, fx.ofm->predict_scan_order(f));
    Tensor z = silu(linear(f, fx.store.get("ofm.gate.weight"), fx.store.get("ofm.gate.bias")));
    Tensor fused = add(add(mul(yf, z), mul(yb, z)), mul(yd, z));
    Tensor out = linear(fused, fx.store.get("ofm.out_proj.weight"),
                        fx.store.get("ofm.out_proj.bias"));
    auto chunks = split(out, {4, 4, 4}, 1);
    Tensor ref = add(add(chunks[0], chunks[1]), chunks[2]);
    double m = 0;
    for (size_t i = 0; i < ref.data().size(); ++i)
        m = std::max(m, std::fabs(ref.data()[i] - y.data()[i]));
    CHECK(m < 1e-10);
}

TEST_CASE("identity predicted order makes the dynamic branch equal the forward branch") {
    Fixture fx(18, 3, 4, 4);  // shared branch parameters
    Rng rng(19);
    Tensor f = Tensor::randn({2, 12, 4}, rng);
    Tensor yd = fx.ofm->dynamic_branch(f, ScanOrder::identity(2, 3));
    Tensor yf = fx.ofm->scan_branch(f, ScanDirection::Forward);
    CHECK(yd.data() == yf.data());
}

TEST_CASE("unshared branches use distinct parameter sets") {
    Fixture fx(20, 2, 3, 3, /*shared=*/false);
    CHECK(fx.store.has("ofm.branch.forward.conv1d.weight"));
    CHECK(fx.store.has("ofm.branch.backward.conv1d.weight"));
    CHECK(fx.store.has("ofm.branch.dynamic.conv1d.weight"));
    CHECK(fx.store.scalar_count() == Ofm::param_count(fx.cfg));
    Rng rng(21);
    Tensor f = Tensor::randn({1, 6, 3}, rng);
    Tensor yf = fx.ofm->scan_branch(f, ScanDirection::Forward);
    Tensor yd = fx.ofm->dynamic_branch(f, ScanOrder::identity(1, 2));
    CHECK(yf.data() != yd.data());
}

TEST_CASE("straight-through flag: identical forward, gradients reach the predictor") {
    Rng rng(22);
    Tensor f_vals = Tensor::randn({1, 8, 4}, rng);

    auto run = [&](bool ste) {
        Fixture fx(23, 2, 4, 4, true, ste);
        Tensor f = f_vals.detach();
        f.set_requires_grad(true);
        LayerStack s;
        auto parts = split(f, {4, 4}, 1);
        s.layers = {parts[0], parts[1]};
        Tensor y = fx.ofm->forward(s);
        fx.store.zero_grads();
        backward(sum(mul(y, y)));
        double mlp_gnorm = 0;
        for (double g : fx.store.get("ofm.order.mlp.weight").grad()) mlp_gnorm += g * g;
        return std::make_pair(y.data(), mlp_gnorm);
    };
    auto off = run(false);
    auto on = run(true);
    CHECK(off.first == on.first);   // conduit multiplies by exactly 1
    CHECK(off.second == 0.0);       // detached predictor without the flag
    CHECK(on.second > 0.0);
}

TEST_CASE("scan work grows linearly in the number of layers") {
    Rng rng(24);
    auto measure = [&](int64_t N) {
        Fixture fx(25, N, 4, 3);
        auto stack = fx.stack(rng);
        autograd::NoGradGuard ng;
        ScanStats::reset();
        fx.ofm->forward(stack);
        return ScanStats::state_updates();
    };
    const long long u2 = measure(2);
    const long long u4 = measure(4);
    const long long u8 = measure(8);
    CHECK(u4 == 2 * u2);
    CHECK(u8 == 2 * u4);
}

TEST_CASE("end-to-end gradient check through the scanned values") {
    for (const auto& o : oracle::gradcheck_suite(26)) {
        if (o.name == "ofm.forward") {
            INFO("max_rel_err=", o.max_err, " ", o.detail);
            CHECK(o.pass);
            return;
        }
    }
    FAIL("missing ofm gradcheck");
}
