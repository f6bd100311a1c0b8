#include <doctest.h>

#include <cmath>

#include "mate/flow.hpp"
#include "mate/ops.hpp"
#include "support.hpp"

using namespace mate;
using namespace mate::flow;
using T2 = Tensor<double>;

namespace {

double max_abs_diff(const T2& a, const T2& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace

TEST_CASE("forward process endpoints and midpoint") {
    Rng rng(1);
    auto x0 = testing::random({4, 3}, rng), eps = testing::random({4, 3}, rng);
    CHECK(max_abs_diff(forward_process(x0, eps, 0.0), x0) == 0.0);
    CHECK(max_abs_diff(forward_process(x0, eps, 1.0), eps) == 0.0);
    auto mid = forward_process(T2({1}, {2.0}), T2({1}, {0.0}), 0.5);
    CHECK(mid.item() == 1.0);
}

TEST_CASE("velocity target and the straight-path identity") {
    auto e = T2({2}, {0.5, -1.5});
    CHECK(max_abs_diff(velocity_target(T2::zeros({2}), e), e) == 0.0);
    CHECK(max_abs_diff(velocity_target(e, e), T2::zeros({2})) == 0.0);
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto x0 = testing::random({5, 4}, rng), eps = testing::random({5, 4}, rng);
        const double t = rng.uniform();
        auto x_t = forward_process(x0, eps, t);
        auto back = sub(x_t, scale(velocity_target(x0, eps), t));
        CHECK(max_abs_diff(back, x0) <= 1e-12);
    }
}

TEST_CASE("cfg_combine") {
    auto u = T2({3}, {1, -2, 0.5});
    auto zero = T2::zeros({3});
    auto c = T2({3}, {4, 5, 6});
    CHECK(max_abs_diff(cfg_combine(c, u, 1.0), c) == 0.0);
    CHECK(max_abs_diff(cfg_combine(c, u, 0.0), u) == 0.0);
    CHECK(max_abs_diff(cfg_combine(u, zero, 30.0), scale(u, 30.0)) == 0.0);
}

TEST_CASE("init_from_illumination") {
    Rng rng(3);
    auto z = testing::random({64, 64}, rng);
    auto pure = init_from_illumination(z, 1.0, 17);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < z.numel(); ++i) {
        sxy += z.at(i) * pure.x.at(i);
        sxx += z.at(i) * z.at(i);
        syy += pure.x.at(i) * pure.x.at(i);
    }
    CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.05);

    auto near = init_from_illumination(z, 1e-6, 17);
    CHECK(max_abs_diff(near.x, z) < 1e-4);
    CHECK(near.t == 1e-6);

    auto again = init_from_illumination(z, 0.9, 17);
    auto again2 = init_from_illumination(z, 0.9, 17);
    CHECK(max_abs_diff(again.x, again2.x) == 0.0);
    CHECK_THROWS_AS(init_from_illumination(z, 0.0, 1), RangeError);
    CHECK_THROWS_AS(init_from_illumination(z, 1.5, 1), RangeError);
}

TEST_CASE("cfm_loss: oracle predictor, determinism, zero predictor") {
    Rng rng(4);
    std::vector<T2> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(testing::random({6, 5}, rng));

    // Recompute the per-item (t, eps) exactly as the loss does.
    TrainVelocityFn<double> oracle = [&](const T2& x_t, double t, std::size_t item) {
        Rng r(derive_seed(99, {item}));
        const double tt = r.uniform();
        CHECK(tt == t);
        auto eps = T2::randn(x_t.shape(), r);
        return velocity_target(batch[item], eps);
    };
    CHECK(cfm_loss<double>(oracle, batch, 99).item() <= 1e-8);

    TrainVelocityFn<double> zero_fn = [](const T2& x_t, double, std::size_t) { return T2::zeros(x_t.shape()); };
    CHECK(cfm_loss<double>(zero_fn, batch, 5).item() == cfm_loss<double>(zero_fn, batch, 5).item());
    CHECK(cfm_loss<double>(zero_fn, batch, 5).item() > 0.0);

    // x0 = 0 and v = 0: the loss is |eps|² per token, whose mean is the token dimension.
    const std::size_t dim = 12;
    std::vector<T2> zeros(16, T2::zeros({16, dim}));
    double acc = 0;
    const int draws = 40;  // 40 × 16 items × 16 tokens > 10⁴ token draws
    for (int s = 0; s < draws; ++s) acc += cfm_loss<double>(zero_fn, zeros, s).item();
    CHECK(std::abs(acc / draws - double(dim)) < 0.05 * dim);
}

TEST_CASE("Euler sampler on a straight path") {
    Rng rng(6);
    auto x0 = testing::random({8, 4}, rng), eps = testing::random({8, 4}, rng);
    GuidedVelocityFn<double> exact = [&](const T2&, double, bool) { return velocity_target(x0, eps); };

    FlowState<double> start{eps, 1.0, 0};
    FlowConfig one;
    one.num_steps = 1;
    one.cfg_scale = 1.0;
    one.t_start = 1.0;
    CHECK(max_abs_diff(sample(exact, start, one), x0) <= 1e-5);

    FlowConfig c8 = one, c64 = one;
    c8.num_steps = 8;
    c64.num_steps = 64;
    CHECK(max_abs_diff(sample(exact, start, c8), sample(exact, start, c64)) <= 1e-5);

    // Partial path from t_start = 0.9 also lands on x0.
    FlowState<double> mid{forward_process(x0, eps, 0.9), 0.9, 0};
    FlowConfig c = one;
    c.num_steps = 8;
    c.t_start = 0.9;
    CHECK(max_abs_diff(sample(exact, mid, c), x0) <= 1e-5);
}

TEST_CASE("CFG scale 0 equals unconditional sampling bitwise") {
    Rng rng(7);
    auto x = testing::random({4, 4}, rng);
    int cond_calls = 0;
    GuidedVelocityFn<double> model = [&](const T2& x_t, double t, bool conditional) {
        cond_calls += conditional;
        return conditional ? scale(x_t, 3.0) : scale(x_t, t);
    };
    GuidedVelocityFn<double> uncond = [&](const T2& x_t, double t, bool) { return scale(x_t, t); };
    FlowConfig c;
    c.cfg_scale = 0.0;
    FlowState<double> s{x, 0.9, 0};
    auto a = sample(model, s, c), b = sample(uncond, s, c);
    CHECK(cond_calls == 0);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("sampling is deterministic and blending keeps unmasked rows on the noised input path") {
    Rng rng(8);
    auto x = testing::random({4, 3}, rng), x_in = testing::random({4, 3}, rng);
    GuidedVelocityFn<double> model = [](const T2& x_t, double t, bool c) { return scale(x_t, c ? 0.5 : t); };
    LatentBlend<double> blend{x_in, {1.0, 0.0, 0.5, 0.0}, 3};
    FlowConfig c;
    FlowState<double> s{x, 0.9, 0};
    auto a = sample(model, s, c, &blend), b = sample(model, s, c, &blend);
    CHECK(max_abs_diff(a, b) == 0.0);
    // Rows with mask 0 end exactly on x_in (t_next = 0 on the last step).
    for (std::size_t r : {1u, 3u})
        for (std::size_t j = 0; j < 3; ++j) CHECK(a.at(r, j) == x_in.at(r, j));
}

TEST_CASE("sampler contracts") {
    GuidedVelocityFn<double> model = [](const T2& x_t, double, bool) { return x_t; };
    FlowConfig bad;
    bad.num_steps = 0;
    CHECK_THROWS_AS(sample(model, FlowState<double>{T2::zeros({2, 2}), 0.9, 0}, bad), RangeError);
    GuidedVelocityFn<double> blowup = [](const T2& x_t, double, bool) { return scale(x_t, 1e200); };
    FlowConfig c;
    c.cfg_scale = 1.0;
    try {
        sample(blowup, FlowState<double>{T2::filled({2, 2}, 1e200), 0.9, 0}, c);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step() == 0);
    }
}
