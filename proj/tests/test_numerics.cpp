#include <doctest.h>

#include <cmath>
#include <limits>

#include "mate/ops.hpp"
#include "support.hpp"

using namespace mate;
using mate::testing::gradcheck;
using mate::testing::probe;
using mate::testing::random;

namespace {

using T2 = Tensor<double>;

std::vector<double> triple_loop(const T2& a, const T2& b) {
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    std::vector<double> c(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t k = 0; k < q; ++k) c[i * r + j] += a.at(i, k) * b.at(k, j);
    return c;
}

}  // namespace

TEST_CASE("matmul small cases") {
    T2 id({2, 2}, {1, 0, 0, 1});
    T2 m({2, 2}, {1, 2, 3, 4});
    auto y = matmul(id, m);
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});

    T2 proj({2, 2}, {1, 0, 0, 0});
    T2 n({2, 2}, {5, 6, 7, 8});
    auto z = matmul(proj, n);
    CHECK(std::vector<double>(z.data().begin(), z.data().end()) == std::vector<double>{5, 6, 0, 0});

    CHECK_THROWS_AS(matmul(T2::zeros({3, 4}), T2::zeros({3, 2})), DimensionError);
}

TEST_CASE("matmul matches the triple loop on values in [-10, 10]") {
    Rng rng(7);
    for (auto [p, q, r] : {std::tuple{3, 4, 2}, std::tuple{17, 33, 9}, std::tuple{64, 48, 64}}) {
        std::vector<float> av(p * q), bv(q * r);
        for (auto& v : av) v = float(rng.uniform(-10, 10));
        for (auto& v : bv) v = float(rng.uniform(-10, 10));
        Tensor<float> a({std::size_t(p), std::size_t(q)}, av), b({std::size_t(q), std::size_t(r)}, bv);
        auto c = matmul(a, b);
        auto ref = triple_loop(a.cast<double>(), b.cast<double>());
        double worst = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - double(c.at(i))));
        // float accumulation of q products of magnitude <= 100
        CHECK(worst <= 1e-6 * 100 * q);
        auto cd = matmul(a.cast<double>(), b.cast<double>());
        double worst_d = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) worst_d = std::max(worst_d, std::abs(ref[i] - cd.at(i)));
        CHECK(worst_d <= 1e-6);
    }
}

TEST_CASE("softmax rows") {
    auto s = softmax_rows(T2({1, 2}, {0, 0}));
    CHECK(s.at(0) == doctest::Approx(0.5));
    CHECK(s.at(1) == doctest::Approx(0.5));

    const double c = 12.5;
    auto r = softmax_rows(T2({1, 2}, {c, c + std::log(3.0)}));
    CHECK(std::abs(r.at(0) - 0.25) < 1e-12);
    CHECK(std::abs(r.at(1) - 0.75) < 1e-12);

    auto d = softmax_rows(T2({1, 3}, {1, 2, 3}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(d.at(i) - std::exp(i + 1.0) / z) < 1e-7);

    Rng rng(3);
    auto x = random({5, 7}, rng, 4.0);
    auto sx = softmax_rows(x);
    auto sx_shift = softmax_rows(add_scalar(x, 100.0));
    for (std::size_t i = 0; i < 5; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 7; ++j) {
            row += sx.at(i, j);
            CHECK(std::abs(sx.at(i, j) - sx_shift.at(i, j)) < 1e-6);
        }
        CHECK(std::abs(row - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax handles -inf entries and rejects fully masked rows") {
    const double ninf = -std::numeric_limits<double>::infinity();
    auto s = softmax_rows(T2({2, 3}, {0, ninf, 0, ninf, 1, ninf}));
    CHECK(s.at(0, 0) == doctest::Approx(0.5));
    CHECK(s.at(0, 1) == 0.0);
    CHECK(s.at(1, 1) == 1.0);
    CHECK_THROWS_AS(softmax_rows(T2({1, 2}, {ninf, ninf})), NumericsError);
}

TEST_CASE("non-finite results surface as errors") {
    T2 big({1}, {1e300});
    CHECK_THROWS_AS(mul(big, big), NumericsError);
    CHECK_THROWS_AS(scale(Tensor<float>({1}, {3e38f}), 10.0f), NumericsError);
}

TEST_CASE("backward on simple losses") {
    T2 x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    {
        GradTape<double> tape;
        tape.backward(sum(x));
    }
    for (double g : x.grad()) CHECK(g == 1.0);

    T2 y({3}, {1, 2, 3}, true);
    {
        GradTape<double> tape;
        tape.backward(sum(mul(y, y)));
    }
    CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 4, 6});

    GradTape<double> tape;
    T2 v({2}, {1, 2}, true);
    CHECK_THROWS_AS(tape.backward(mul(v, v)), ContractError);
}

TEST_CASE("tape replays records in reverse registration order") {
    GradTape<double> tape;
    std::vector<int> order;
    for (int i = 0; i < 5; ++i) tape.record([&order, i] { order.push_back(i); });
    T2 x({1}, {2.0}, true);
    auto loss = scale(x, 3.0);
    tape.record([&order] { order.push_back(99); });
    tape.backward(loss);
    CHECK(order == std::vector<int>{99, 4, 3, 2, 1, 0});
    CHECK(tape.size() == 0);
    CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("leaves that do not reach the loss get no gradient") {
    T2 a({2}, {1, 2}, true), unused({2}, {3, 4}, true);
    GradTape<double> tape;
    tape.backward(sum(a));
    CHECK(a.has_grad());
    CHECK_FALSE(unused.has_grad());
}

TEST_CASE("gradcheck of every differentiable op over 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        Rng rng(seed);
        auto a = random({3, 4}, rng), b = random({3, 4}, rng), c = random({4, 5}, rng);
        auto row = random({4}, rng), gain = random({4}, rng), bias = random({4}, rng);
        auto wide = random({6, 8}, rng);
        const std::uint64_t ps = seed + 1000;
        const std::vector<std::size_t> idx = {2, 0, 2, 1};
        const std::vector<std::size_t> counts = {1, 2};

        struct Case {
            const char* name;
            std::vector<std::pair<std::string, T2*>> params;
            std::function<T2()> loss;
        };
        std::vector<Case> cases = {
            {"add", {{"a", &a}, {"b", &b}}, [&] { return probe(add(a, b), ps); }},
            {"sub", {{"a", &a}, {"b", &b}}, [&] { return probe(sub(a, b), ps); }},
            {"mul", {{"a", &a}, {"b", &b}}, [&] { return probe(mul(a, b), ps); }},
            {"scale", {{"a", &a}}, [&] { return probe(scale(a, -1.7), ps); }},
            {"add_scalar", {{"a", &a}}, [&] { return probe(add_scalar(a, 0.3), ps); }},
            {"add_row", {{"a", &a}, {"row", &row}}, [&] { return probe(add_row(a, row), ps); }},
            {"mul_row", {{"a", &a}, {"row", &row}}, [&] { return probe(mul_row(a, row), ps); }},
            {"matmul", {{"a", &a}, {"c", &c}}, [&] { return probe(matmul(a, c), ps); }},
            {"transpose", {{"a", &a}}, [&] { return probe(transpose(a), ps); }},
            {"reshape", {{"a", &a}}, [&] { return probe(reshape(a, {2, 6}), ps); }},
            {"concat_rows", {{"a", &a}, {"b", &b}}, [&] { return probe(concat_rows<double>({a, b, a}), ps); }},
            {"slice_rows", {{"a", &a}}, [&] { return probe(slice_rows(a, 1, 2), ps); }},
            {"split_rows", {{"a", &a}},
             [&] {
                 auto parts = split_rows(a, std::span<const std::size_t>(counts));
                 return add(probe(parts[0], ps), probe(parts[1], ps + 1));
             }},
            {"gather_rows", {{"a", &a}}, [&] { return probe(gather_rows(a, std::span<const std::size_t>(idx)), ps); }},
            {"layer_norm", {{"a", &a}, {"gain", &gain}, {"bias", &bias}},
             [&] { return probe(layer_norm(a, &gain, &bias), ps); }},
            {"gelu", {{"a", &a}}, [&] { return probe(gelu(a), ps); }},
            {"silu", {{"a", &a}}, [&] { return probe(silu(a), ps); }},
            {"softmax_rows", {{"wide", &wide}}, [&] { return probe(softmax_rows(wide), ps); }},
            {"sum", {{"a", &a}}, [&] { return mul(sum(a), sum(a)); }},
            {"mean", {{"a", &a}}, [&] { return mul(mean(a), sum(b)); }},
        };
        for (auto& cs : cases) {
            CAPTURE(cs.name);
            auto r = gradcheck(cs.params, cs.loss);
            CAPTURE(r.worst);
            CHECK(r.max_rel < 1e-4);
        }
    }
}

TEST_CASE("gradcheck of rope_rotate and attention") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        Rng rng(seed + 50);
        const std::size_t t = 6, heads = 2, hd = 4;
        std::vector<GridPos> pos;
        for (std::size_t i = 0; i < t; ++i) pos.push_back({std::int32_t(i / 3), std::int32_t(i % 3 + 2)});
        RopeTable<double> rope(pos, hd);
        auto q = random({t, heads * hd}, rng), k = random({t, heads * hd}, rng), v = random({t, heads * hd}, rng);
        AttentionBias<double> bias;
        bias.stream = {0, 0, 1, 1, 1, 2};
        bias.modulated_stream = 0;
        bias.log_gamma = std::log(1.8);
        bias.dense = random({t, t}, rng);
        const std::uint64_t ps = seed + 77;
        auto r1 = gradcheck({{"q", &q}}, [&] { return probe(rope_rotate(q, rope, heads), ps); });
        CHECK(r1.max_rel < 1e-4);
        auto r2 = gradcheck({{"q", &q}, {"k", &k}, {"v", &v}},
                            [&] { return probe(attention(q, k, v, heads, bias), ps); });
        CAPTURE(r2.worst);
        CHECK(r2.max_rel < 1e-4);
    }
}

TEST_CASE("seeded RNG streams are reproducible") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs |= x != c.next_u64();
    }
    CHECK(differs);
    auto n1 = Tensor<float>::randn({64}, 9), n2 = Tensor<float>::randn({64}, 9);
    CHECK(std::equal(n1.data().begin(), n1.data().end(), n2.data().begin()));
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
}

TEST_CASE("normal sampler moments") {
    Rng rng(11);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("float and double paths agree") {
    Rng rng(5);
    auto a = random<float>({9, 12}, rng), b = random<float>({12, 7}, rng);
    auto yf = softmax_rows(matmul(a, b));
    auto yd = softmax_rows(matmul(a.cast<double>(), b.cast<double>()));
    for (std::size_t i = 0; i < yf.numel(); ++i) CHECK(std::abs(double(yf.at(i)) - yd.at(i)) < 1e-5);
}
