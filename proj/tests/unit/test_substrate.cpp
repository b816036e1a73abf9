#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mlr/gradcheck.hpp"
#include "mlr/graph.hpp"

using namespace mlr;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

std::vector<float> to_f32(const std::vector<double>& v) {
    return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("matmul against identity leaves input unchanged") {
    Graph<float> g;
    Rng rng(11);
    auto av = to_f32(random_vec(3 * 4, rng));
    std::vector<float> eye(4 * 4, 0.f);
    for (int i = 0; i < 4; ++i) eye[(size_t)i * 4 + i] = 1.f;
    auto a = g.leaf({3, 4}, av, false);
    auto out = g.matmul(a, g.constant({4, 4}, eye));
    for (size_t i = 0; i < av.size(); ++i) REQUIRE(out.values()[i] == av[i]);
}

TEST_CASE("matmul accumulates dot products in 64-bit") {
    // 1e8 + 1 - 1e8 survives a double accumulator and dies in a float one.
    Graph<float> g;
    std::vector<float> a = {1e8f, 1.f, -1e8f};
    std::vector<float> b = {1.f, 1.f, 1.f};
    auto out = g.matmul(g.constant({1, 3}, a), g.constant({3, 1}, b));
    REQUIRE(out.values()[0] == 1.0f);
}

TEST_CASE("softmax of a constant row is uniform") {
    Graph<float> g;
    std::vector<float> x(4, 0.f);
    auto y = g.softmax_rows(g.constant({1, 4}, x));
    for (int j = 0; j < 4; ++j) REQUIRE(y.values()[j] == 0.25f);
}

TEST_CASE("softmax rows sum to one and stay strictly positive") {
    Graph<float> g;
    Rng rng(12);
    auto x = to_f32(random_vec(6 * 9, rng));
    auto y = g.softmax_rows(g.constant({6, 9}, x));
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            const float v = y.values()[(size_t)i * 9 + j];
            REQUIRE(v > 0.f);
            s += v;
        }
        REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
}

TEST_CASE("layer_norm matches direct mean/variance computation") {
    Graph<double> g;
    Rng rng(13);
    auto x = random_vec(5 * 16, rng, -2.0, 2.0);
    auto y = g.layer_norm(g.constant({5, 16}, x));
    for (int i = 0; i < 5; ++i) {
        double mu = 0.0;
        for (int j = 0; j < 16; ++j) mu += x[(size_t)i * 16 + j];
        mu /= 16.0;
        double var = 0.0;
        for (int j = 0; j < 16; ++j) {
            const double d = x[(size_t)i * 16 + j] - mu;
            var += d * d;
        }
        var /= 16.0;
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (int j = 0; j < 16; ++j) {
            const double want = (x[(size_t)i * 16 + j] - mu) * rstd;
            REQUIRE_THAT(y.values()[(size_t)i * 16 + j], Catch::Matchers::WithinAbs(want, 1e-12));
        }
    }
}

TEST_CASE("layer_norm handles a zero-variance row") {
    Graph<float> g;
    std::vector<float> x(8, 3.25f);
    auto y = g.layer_norm(g.constant({1, 8}, x));
    for (int j = 0; j < 8; ++j) REQUIRE(std::fabs(y.values()[j]) < 1e-3f);
}

TEST_CASE("bias-row add broadcasts and reduces gradients per column") {
    Graph<double> g;
    std::vector<double> a = {1, 2, 3, 4, 5, 6};  // 3x2
    std::vector<double> b = {10, 20};            // 1x2 bias
    auto ta = g.leaf({3, 2}, a, true);
    auto tb = g.leaf({1, 2}, b, true);
    auto sum = g.add(ta, tb);
    REQUIRE(sum.values()[0] == 11.0);
    REQUIRE(sum.values()[5] == 26.0);
    // reduce to scalar through masked_nll-free path: slice+matmul trick
    auto ones = g.constant({2, 1}, std::vector<double>{1, 1});
    auto rowsum = g.matmul(sum, ones);                       // 3x1
    auto total = g.matmul(g.transpose(rowsum),
                          g.constant({3, 1}, std::vector<double>{1, 1, 1}));  // 1x1
    g.backward(total);
    for (int j = 0; j < 2; ++j) REQUIRE(tb.grad()[(size_t)j] == 3.0);  // column count of a
    for (size_t i = 0; i < 6; ++i) REQUIRE(ta.grad()[i] == 1.0);
}

TEST_CASE("every op backward matches central finite differences") {
    Rng rng(21);
    const double h = 1e-3, tol = 1e-4;

    SECTION("matmul, both operands") {
        auto bv = random_vec(4 * 5, rng);
        auto xv = random_vec(3 * 4, rng);
        auto build_a = [&](Graph<double>& g, Tensor<double> x) {
            auto b = g.constant({4, 5}, bv);
            auto y = g.matmul(x, b);
            return g.masked_nll(y, {0, 1, 2}, {1, 2, 3});
        };
        REQUIRE(grad_check(build_a, {3, 4}, xv, h) < tol);
        auto build_b = [&](Graph<double>& g, Tensor<double> x) {
            auto a = g.constant({3, 4}, xv);
            auto y = g.matmul(a, x);
            return g.masked_nll(y, {0, 2}, {0, 4});
        };
        REQUIRE(grad_check(build_b, {4, 5}, bv, h) < tol);
    }
    SECTION("add same-shape and bias-row") {
        auto av = random_vec(3 * 4, rng);
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            auto a = g.constant({3, 4}, av);
            return g.masked_nll(g.add(a, x), {0, 1}, {2, 3});
        };
        REQUIRE(grad_check(build, {3, 4}, random_vec(12, rng), h) < tol);
        auto build_bias = [&](Graph<double>& g, Tensor<double> x) {
            auto a = g.constant({3, 4}, av);
            return g.masked_nll(g.add(a, x), {0, 1, 2}, {0, 1, 2});
        };
        REQUIRE(grad_check(build_bias, {1, 4}, random_vec(4, rng), h) < tol);
    }
    SECTION("scale") {
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            return g.masked_nll(g.scale(x, -2.75), {0, 1}, {1, 0});
        };
        REQUIRE(grad_check(build, {2, 3}, random_vec(6, rng), h) < tol);
    }
    SECTION("softmax_rows") {
        auto wv = random_vec(4 * 4, rng);
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            // keep softmax inside a differentiable chain with mixing after it
            auto y = g.matmul(g.softmax_rows(x), g.constant({4, 4}, wv));
            return g.masked_nll(y, {0, 1, 2}, {3, 0, 1});
        };
        REQUIRE(grad_check(build, {3, 4}, random_vec(12, rng), h) < tol);
    }
    SECTION("layer_norm") {
        auto wv = random_vec(6 * 5, rng);
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            auto y = g.matmul(g.layer_norm(x), g.constant({6, 5}, wv));
            return g.masked_nll(y, {0, 1}, {4, 2});
        };
        REQUIRE(grad_check(build, {2, 6}, random_vec(12, rng), h) < tol);
    }
    SECTION("gelu") {
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            return g.masked_nll(g.gelu(x), {0, 1}, {0, 2});
        };
        REQUIRE(grad_check(build, {2, 3}, random_vec(6, rng, -2.0, 2.0), h) < tol);
    }
    SECTION("embed_lookup with repeated ids") {
        std::vector<int> ids = {2, 0, 2, 1};
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            return g.masked_nll(g.embed_lookup(x, ids), {0, 1, 2, 3}, {1, 0, 2, 3});
        };
        REQUIRE(grad_check(build, {3, 4}, random_vec(12, rng), h) < tol);
    }
    SECTION("concat_rows and slice_rows") {
        auto av = random_vec(2 * 3, rng);
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            auto a = g.constant({2, 3}, av);
            auto cat = g.concat_rows({a, x, a});
            return g.masked_nll(g.slice_rows(cat, 1, 6), {0, 2, 4}, {0, 1, 2});
        };
        REQUIRE(grad_check(build, {3, 3}, random_vec(9, rng), h) < tol);
    }
    SECTION("transpose") {
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            return g.masked_nll(g.transpose(x), {0, 1, 2}, {0, 1, 1});
        };
        REQUIRE(grad_check(build, {2, 3}, random_vec(6, rng), h) < tol);
    }
    SECTION("masked NLL through a two-layer forward") {
        auto w1 = random_vec(4 * 8, rng);
        auto w2 = random_vec(8 * 5, rng);
        auto build = [&](Graph<double>& g, Tensor<double> x) {
            auto h1 = g.gelu(g.matmul(x, g.constant({4, 8}, w1)));
            auto y = g.matmul(g.layer_norm(h1), g.constant({8, 5}, w2));
            return g.masked_nll(y, {0, 2}, {3, 1});
        };
        REQUIRE(grad_check(build, {3, 4}, random_vec(12, rng), h) < tol);
    }
}

TEST_CASE("masked_nll on uniform logits over two classes equals ln 2") {
    Graph<double> g;
    std::vector<double> logits = {0.0, 0.0};
    auto loss = g.masked_nll(g.constant({1, 2}, logits), {0}, {1});
    REQUIRE_THAT(loss.values()[0], Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));

    Graph<float> gf;
    std::vector<float> lf = {0.f, 0.f};
    auto lossf = gf.masked_nll(gf.constant({1, 2}, lf), {0}, {0});
    REQUIRE_THAT((double)lossf.values()[0],
                 Catch::Matchers::WithinAbs(0.6931471805599453, 1e-6));
}

TEST_CASE("masked_nll ignores rows outside the supervised list") {
    Rng rng(31);
    auto base = to_f32(random_vec(6 * 10, rng));
    auto perturbed = base;
    for (int r : {0, 2, 3, 5})  // rows 1 and 4 stay supervised
        for (int j = 0; j < 10; ++j) perturbed[(size_t)r * 10 + j] += 17.5f;

    Graph<float> g1, g2;
    auto l1 = g1.masked_nll(g1.constant({6, 10}, base), {1, 4}, {3, 7});
    auto l2 = g2.masked_nll(g2.constant({6, 10}, perturbed), {1, 4}, {3, 7});
    REQUIRE(l1.values()[0] == l2.values()[0]);
}

TEST_CASE("unreachable requires_grad tensors receive zero gradients") {
    Graph<double> g;
    auto used = g.leaf({2, 2}, std::vector<double>{1, 2, 3, 4}, true);
    auto unused = g.leaf({2, 2}, std::vector<double>{5, 6, 7, 8}, true);
    auto loss = g.masked_nll(used, {0}, {1});
    g.backward(loss);
    REQUIRE(unused.grad().size() == 4);
    for (double v : unused.grad()) REQUIRE(v == 0.0);
    bool any = false;
    for (double v : used.grad()) any = any || v != 0.0;
    REQUIRE(any);
}

TEST_CASE("graph replay is bitwise deterministic") {
    auto run = [] {
        Graph<float> g;
        Rng rng(77);
        std::vector<float> x(8 * 8), w(8 * 8);
        for (auto& v : x) v = (float)rng.normal();
        for (auto& v : w) v = (float)rng.normal();
        auto y = g.softmax_rows(g.matmul(g.layer_norm(g.constant({8, 8}, x)),
                                         g.constant({8, 8}, w)));
        return std::vector<float>(y.values().begin(), y.values().end());
    };
    auto a = run(), b = run();
    REQUIRE(a == b);
}

TEST_CASE("slice of a concat returns the original rows bit for bit") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const int cols = 1 + (int)rng.uniform_int(6);
        const int ra = 1 + (int)rng.uniform_int(5);
        const int rb = 1 + (int)rng.uniform_int(5);
        Graph<float> g;
        auto av = to_f32(random_vec((size_t)ra * cols, rng));
        auto bv = to_f32(random_vec((size_t)rb * cols, rng));
        auto cat = g.concat_rows({g.constant({ra, cols}, av), g.constant({rb, cols}, bv)});
        auto back = g.slice_rows(cat, ra, ra + rb);
        REQUIRE(std::vector<float>(back.values().begin(), back.values().end()) == bv);
    }
}

TEST_CASE("transpose twice is the identity") {
    Graph<float> g;
    Rng rng(42);
    auto av = to_f32(random_vec(3 * 7, rng));
    auto t2 = g.transpose(g.transpose(g.constant({3, 7}, av)));
    REQUIRE(std::vector<float>(t2.values().begin(), t2.values().end()) == av);
}

TEST_CASE("shape and contract violations are hard errors") {
    Graph<float> g;
    auto a = g.zeros({2, 3});
    auto b = g.zeros({4, 5});
    REQUIRE_THROWS_AS(g.matmul(a, b), ShapeError);
    REQUIRE_THROWS_AS(g.add(a, b), ShapeError);
    REQUIRE_THROWS_AS(g.concat_rows({a, b}), ShapeError);
    REQUIRE_THROWS_AS(g.slice_rows(a, 1, 1), ContractError);
    REQUIRE_THROWS_AS(g.slice_rows(a, 0, 3), ContractError);
    REQUIRE_THROWS_AS(g.embed_lookup(a, std::vector<int>{5}), ContractError);
    REQUIRE_THROWS_AS(g.masked_nll(a, {0}, {0, 1}), ContractError);
    REQUIRE_THROWS_AS(g.masked_nll(a, {7}, {0}), ContractError);
}

TEST_CASE("backward demands a scalar loss and runs once per graph") {
    Graph<float> g1;
    auto x = g1.leaf({2, 2}, std::vector<float>{1, 2, 3, 4}, true);
    auto y = g1.gelu(x);
    REQUIRE_THROWS_AS(g1.backward(y), ContractError);

    Graph<float> g2;
    auto x2 = g2.leaf({1, 4}, std::vector<float>{1, 2, 3, 4}, true);
    auto loss = g2.masked_nll(x2, {0}, {2});
    g2.backward(loss);
    REQUIRE_THROWS_AS(g2.backward(loss), ContractError);
}

TEST_CASE("non-finite op output raises a numeric error") {
    Graph<float> g;
    auto big = g.constant({1, 2}, std::vector<float>{1e30f, 1e30f});
    REQUIRE_THROWS_AS(g.scale(g.scale(big, 1e30), 1e30), NumericError);
}

TEST_CASE("grad_check rejects a non-positive step") {
    auto build = [](Graph<double>& g, Tensor<double> x) { return g.masked_nll(x, {0}, {0}); };
    std::vector<double> x0 = {0.5, -0.5};
    REQUIRE_THROWS_AS(grad_check(build, {1, 2}, x0, 0.0), ContractError);
}

TEST_CASE("grad_check on a known linear form is near machine precision") {
    // f(x) = sum(w . x) via matmul; analytic gradient is w itself.
    Rng rng(55);
    auto wv = random_vec(6, rng);
    auto build = [&](Graph<double>& g, Tensor<double> x) {
        return g.matmul(x, g.constant({6, 1}, wv));  // 1x1
    };
    REQUIRE(grad_check(build, {1, 6}, random_vec(6, rng), 1e-3) < 1e-6);
}

TEST_CASE("generic apply dispatches every public op kind") {
    Graph<float> g;
    Rng rng(61);
    auto a = g.constant({2, 3}, to_f32(random_vec(6, rng)));
    auto b = g.constant({3, 2}, to_f32(random_vec(6, rng)));
    std::vector<Tensor<float>> ab = {a, b};
    std::vector<Tensor<float>> aa = {a, a};
    std::vector<Tensor<float>> one = {a};

    REQUIRE(g.apply(OpKind::matmul, ab).shape() == Shape{2, 2});
    REQUIRE(g.apply(OpKind::add, aa).shape() == Shape{2, 3});
    OpAttrs sc;
    sc.scalar = 2.0;
    REQUIRE(g.apply(OpKind::scale, one, sc).values()[0] == a.values()[0] * 2.f);
    REQUIRE(g.apply(OpKind::softmax_rows, one).shape() == Shape{2, 3});
    REQUIRE(g.apply(OpKind::layer_norm, one).shape() == Shape{2, 3});
    REQUIRE(g.apply(OpKind::gelu, one).shape() == Shape{2, 3});
    OpAttrs emb;
    emb.indices = {1, 0};
    REQUIRE(g.apply(OpKind::embed_lookup, one, emb).shape() == Shape{2, 3});
    REQUIRE(g.apply(OpKind::concat_rows, aa).shape() == Shape{4, 3});
    OpAttrs sl;
    sl.r0 = 0;
    sl.r1 = 1;
    REQUIRE(g.apply(OpKind::slice_rows, one, sl).shape() == Shape{1, 3});
    REQUIRE(g.apply(OpKind::transpose, one).shape() == Shape{3, 2});
    OpAttrs nll;
    nll.indices = {0};
    nll.targets = {1};
    REQUIRE(g.apply(OpKind::masked_nll, one, nll).shape() == Shape{1, 1});
    REQUIRE_THROWS_AS(g.apply(OpKind::leaf, one), ContractError);
}
