#include <doctest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "vlprompt/ops.hpp"
#include "vlprompt/tensor.hpp"

using namespace vlp;
namespace op = vlp::ops;

namespace {

Tensor rand_t(Shape shape, Rng& rng, bool rg = true, double lo = -2.0, double hi = 2.0) {
    return Tensor::uniform(std::move(shape), rng, lo, hi, Dtype::F64, rg);
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t = Tensor::from_doubles({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.value_at(4) == doctest::Approx(5.0));
    CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_doubles({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);

    Tensor c = t.cast(Dtype::F64);
    CHECK(c.dtype() == Dtype::F64);
    CHECK(c.value_at(5) == doctest::Approx(6.0));
}

TEST_CASE("relu forward matches definition") {
    Tensor x = Tensor::from_doubles({3}, {-1, 0, 2});
    Tensor y = op::relu(x);
    CHECK(y.value_at(0) == 0.0);
    CHECK(y.value_at(1) == 0.0);
    CHECK(y.value_at(2) == 2.0);
}

TEST_CASE("softmax of a uniform row is uniform") {
    const int n = 7;
    Tensor x = Tensor::full({1, n}, 3.25);
    Tensor y = op::softmax_rows(x);
    for (int j = 0; j < n; ++j) CHECK(y.value_at(j) == doctest::Approx(1.0 / n).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(7);
    Tensor x = rand_t({5, 9}, rng, false, -30.0, 30.0);
    Tensor y = op::softmax_rows(x);
    for (int i = 0; i < 5; ++i) {
        double s = 0;
        for (int j = 0; j < 9; ++j) s += y.value_at(i * 9 + j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    // adding a constant per row leaves the output unchanged
    Tensor shifted = op::add_const(x, 123.5);
    Tensor y2 = op::softmax_rows(shifted);
    for (int i = 0; i < 45; ++i) CHECK(y2.value_at(i) == doctest::Approx(y.value_at(i)).epsilon(1e-6));
}

TEST_CASE("softmax is stable for large logits") {
    Tensor x = Tensor::from_doubles({1, 3}, {1e4, 1e4 - 5, 0.0});
    Tensor y = op::softmax_rows(x);
    CHECK(y.all_finite());
    CHECK(y.value_at(0) > 0.99);
}

TEST_CASE("l2 normalization: unit rows and the zero-row rule") {
    Tensor x = Tensor::from_doubles({2, 3}, {3, 0, 4, 0, 0, 0});
    Tensor y = op::l2_normalize_rows(x);
    CHECK(y.value_at(0) == doctest::Approx(0.6));
    CHECK(y.value_at(2) == doctest::Approx(0.8));
    for (int j = 3; j < 6; ++j) CHECK(y.value_at(j) == 0.0);

    Rng rng(3);
    Tensor r = rand_t({6, 8}, rng, false);
    Tensor yr = op::l2_normalize_rows(r);
    for (int i = 0; i < 6; ++i) {
        double ss = 0;
        for (int j = 0; j < 8; ++j) ss += yr.value_at(i * 8 + j) * yr.value_at(i * 8 + j);
        CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("shape errors carry op name and shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    CHECK_THROWS_WITH_AS(op::matmul(a, b), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_AS(op::add(a, b), ShapeError);
    CHECK_THROWS_AS(op::log(Tensor::from_doubles({2}, {1.0, -1.0})), DomainError);
    CHECK_THROWS_AS(op::div(a, Tensor::zeros({2, 3})), DomainError);
}

TEST_CASE("backward: loss must be scalar, grads accumulate") {
    Tensor x = Tensor::from_doubles({2}, {1, 2}, Dtype::F64, true);
    Tensor loss = op::sum_all(op::mul(x, x));
    CHECK_THROWS_AS(op::mul(x, x).backward(), ShapeError);
    loss.backward();
    CHECK(x.grad_at(0) == doctest::Approx(2.0));
    CHECK(x.grad_at(1) == doctest::Approx(4.0));
    loss.backward();  // repeated call accumulates
    CHECK(x.grad_at(0) == doctest::Approx(4.0));
    x.zero_grad();
    loss.backward();
    CHECK(x.grad_at(0) == doctest::Approx(2.0));
}

TEST_CASE("fused softmax + cross-entropy gradient is prediction minus target") {
    Rng rng(11);
    Tensor logits = rand_t({1, 5}, rng, true);
    std::vector<double> tgt = {0.1, 0.2, 0.3, 0.15, 0.25};
    Tensor target = Tensor::from_doubles({1, 5}, tgt, Dtype::F64);
    Tensor probs = op::softmax_rows(logits);
    Tensor loss = op::neg(op::sum_all(op::mul(target, op::log(probs))));
    loss.backward();
    for (int j = 0; j < 5; ++j) {
        CHECK(logits.grad_at(j) == doctest::Approx(probs.value_at(j) - tgt[static_cast<std::size_t>(j)]).epsilon(1e-9));
    }
}

TEST_CASE("matmul gradient matches finite differences on 3x4 * 4x2") {
    Rng rng(1234);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<Tensor> in = {rand_t({3, 4}, rng), rand_t({4, 2}, rng)};
        // sum of squared entries of the product, so gradients depend on both inputs
        auto fn = [](std::vector<Tensor>& v) {
            Tensor p = op::matmul(v[0], v[1]);
            return op::sum_all(op::mul(p, p));
        };
        auto rep_out = vlptest::grad_check(fn, in, 1e-6, 1e-9);
        CHECK_MESSAGE(rep_out.ok(), rep_out.worst);
    }
}

// The per-primitive sweep: 100 random cases per op at f64, rtol 1e-4.
TEST_CASE("gradient check sweep over every primitive") {
    Rng master(20260809);
    const double rtol = 1e-4;

    auto run_cases = [&](const char* name, int cases, auto make_inputs, auto fn) {
        for (int cse = 0; cse < cases; ++cse) {
            Rng rng = master.derive(std::string(name) + std::to_string(cse));
            std::vector<Tensor> in = make_inputs(rng);
            auto rep = vlptest::grad_check(fn, in, rtol);
            CHECK_MESSAGE(rep.ok(), name, " case ", cse, ": ", rep.worst);
            if (!rep.ok()) break;
        }
    };

    // reduce with a fixed random weighting so scalar outputs exercise all coords
    auto weighted_sum = [](const Tensor& t, std::uint64_t salt) {
        Rng r(salt);
        Tensor w = Tensor::uniform(t.shape(), r, 0.5, 1.5, t.dtype());
        return op::sum_all(op::mul(t, w));
    };

    run_cases(
        "matmul", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 4}, rng), rand_t({4, 2}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::matmul(v[0], v[1]), 1); });

    run_cases(
        "add", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 5}, rng), rand_t({2, 5}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::add(v[0], v[1]), 2); });

    run_cases(
        "add_rowvec", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 4}, rng), rand_t({4}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::add(v[0], v[1]), 3); });

    run_cases(
        "add_scalar", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 4}, rng), rand_t({1}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::add(v[0], v[1]), 4); });

    run_cases(
        "sub", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 5}, rng), rand_t({2, 5}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::sub(v[0], v[1]), 5); });

    run_cases(
        "mul", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 5}, rng), rand_t({2, 5}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::mul(v[0], v[1]), 6); });

    run_cases(
        "div", 100,
        [&](Rng& rng) {
            auto num = rand_t({2, 4}, rng);
            auto den = rand_t({2, 4}, rng);
            vlptest::avoid_kinks(den, 0.4);  // keep away from zero
            return std::vector<Tensor>{num, den};
        },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::div(v[0], v[1]), 7); });

    run_cases(
        "scale", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 3}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::scale(v[0], -1.7), 8); });

    run_cases(
        "relu", 100,
        [&](Rng& rng) {
            auto x = rand_t({3, 5}, rng);
            vlptest::avoid_kinks(x, 0.05);
            return std::vector<Tensor>{x};
        },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::relu(v[0]), 9); });

    run_cases(
        "exp", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 4}, rng, true, -1.5, 1.5)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::exp(v[0]), 10); });

    run_cases(
        "log", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 4}, rng, true, 0.3, 3.0)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::log(v[0]), 11); });

    run_cases(
        "softmax_rows", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 6}, rng, true, -3, 3)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::softmax_rows(v[0]), 12); });

    run_cases(
        "softmax_rows_tau", 100,
        [&](Rng& rng) {
            return std::vector<Tensor>{rand_t({2, 5}, rng, true, -2, 2), rand_t({1}, rng, true, 0.3, 2.0)};
        },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::softmax_rows(v[0], v[1]), 13); });

    run_cases(
        "l2_normalize_rows", 100,
        [&](Rng& rng) {
            auto x = rand_t({3, 5}, rng);
            vlptest::avoid_kinks(x, 0.2);  // keep rows clearly nonzero
            return std::vector<Tensor>{x};
        },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::l2_normalize_rows(v[0]), 14); });

    run_cases(
        "layer_norm_rows", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 6}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::layer_norm_rows(v[0]), 15); });

    run_cases(
        "embedding_lookup", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({6, 4}, rng)}; },
        [&](std::vector<Tensor>& v) {
            return weighted_sum(op::embedding_lookup(v[0], {1, 3, 3, 0}), 16);
        });

    run_cases(
        "sum_all", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({4, 3}, rng)}; },
        [&](std::vector<Tensor>& v) { return op::sum_all(v[0]); });

    run_cases(
        "mean_all", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({4, 3}, rng)}; },
        [&](std::vector<Tensor>& v) { return op::mean_all(v[0]); });

    run_cases(
        "sum_axis0", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({4, 3}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::sum_axis(v[0], 0), 17); });

    run_cases(
        "mean_axis1", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({4, 3}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::mean_axis(v[0], 1), 18); });

    run_cases(
        "transpose", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 5}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::transpose(v[0]), 19); });

    run_cases(
        "concat_axis0", 100,
        [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 3}, rng), rand_t({4, 3}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::concat({v[0], v[1]}, 0), 20); });

    run_cases(
        "concat_axis1", 100,
        [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 2}, rng), rand_t({3, 4}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::concat({v[0], v[1]}, 1), 21); });

    run_cases(
        "reshape", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 4}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::reshape(v[0], {2, 6}), 22); });

    run_cases(
        "slice_cols", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 6}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::slice_cols(v[0], 1, 4), 23); });

    run_cases(
        "row", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({4, 5}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::row(v[0], 2), 24); });

    run_cases(
        "conv2d", 100,
        [&](Rng& rng) {
            return std::vector<Tensor>{rand_t({2, 4, 4}, rng), rand_t({3, 2, 3, 3}, rng), rand_t({3}, rng)};
        },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::conv2d(v[0], v[1], v[2]), 25); });

    run_cases(
        "avgpool2", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 4, 4}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::avgpool2(v[0]), 26); });

    run_cases(
        "extract_patches", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({4, 4}, rng)}; },
        [&](std::vector<Tensor>& v) { return weighted_sum(op::extract_patches(v[0], 2), 27); });

    run_cases(
        "dot", 100, [&](Rng& rng) { return std::vector<Tensor>{rand_t({6}, rng), rand_t({6}, rng)}; },
        [&](std::vector<Tensor>& v) { return op::dot(v[0], v[1]); });
}

TEST_CASE("float32 gradcheck at loose tolerance") {
    Rng rng(99);
    for (int cse = 0; cse < 10; ++cse) {
        std::vector<Tensor> in = {Tensor::uniform({3, 4}, rng, -2, 2, Dtype::F32, true),
                                  Tensor::uniform({4, 2}, rng, -2, 2, Dtype::F32, true)};
        // smooth composition (no relu kink to cross at the larger f32 step)
        auto fn = [](std::vector<Tensor>& v) {
            Tensor s = op::softmax_rows(op::matmul(v[0], v[1]));
            Rng wr(17);
            Tensor w = Tensor::uniform(s.shape(), wr, 0.5, 1.5, s.dtype());
            return op::sum_all(op::mul(s, w));
        };
        auto rep = vlptest::grad_check(fn, in, 1e-2, 1e-3, 1e-2);
        CHECK_MESSAGE(rep.ok(), rep.worst);
    }
}

TEST_CASE("determinism: identical graph evaluations are bit-identical") {
    auto build = [] {
        Rng rng(42);
        Tensor a = Tensor::uniform({8, 8}, rng, -1, 1, Dtype::F32, true);
        Tensor b = Tensor::uniform({8, 8}, rng, -1, 1, Dtype::F32, true);
        Tensor loss = op::mean_all(op::softmax_rows(op::matmul(op::relu(a), b)));
        loss.backward();
        return std::make_pair(a.grad_to_doubles(), loss.item());
    };
    auto [g1, l1] = build();
    auto [g2, l2] = build();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}
