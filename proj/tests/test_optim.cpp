#include <doctest.h>

#include <cmath>

#include "vlprompt/optim.hpp"
#include "vlprompt/ops.hpp"

using namespace vlp;
namespace op = vlp::ops;

TEST_CASE("zero gradient and zero weight decay leave parameters unchanged") {
    Tensor w = Tensor::from_doubles({3}, {1.0, -2.0, 0.5}, Dtype::F32, true);
    Adam adam({.lr = 0.1});
    // accumulate an explicitly zero gradient
    Tensor loss = op::sum_all(op::scale(w, 0.0));
    loss.backward();
    adam.step({{"w", w}});
    CHECK(w.value_at(0) == 1.0f);
    CHECK(w.value_at(1) == -2.0f);
    CHECK(w.value_at(2) == 0.5f);
}

TEST_CASE("learning rate zero leaves parameters unchanged") {
    Tensor w = Tensor::from_doubles({2}, {1.0, 2.0}, Dtype::F32, true);
    Tensor loss = op::sum_all(op::mul(w, w));
    loss.backward();
    Adam adam({.lr = 0.0});
    adam.step({{"w", w}});
    CHECK(w.value_at(0) == 1.0f);
    CHECK(w.value_at(1) == 2.0f);
}

TEST_CASE("first bias-corrected step on f(w)=w^2 moves by ~lr") {
    // Hand computation: g = 2, m_hat = 2, v_hat = 4, update = lr * 2/(2+eps) ~= lr.
    Tensor w = Tensor::scalar(1.0, Dtype::F64, true);
    Tensor loss = op::mul(w, w);
    loss.backward();
    Adam adam({.lr = 0.1});
    adam.step({{"w", w}});
    CHECK(w.item() == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("warmup ramps the effective rate linearly") {
    Adam adam({.lr = 1.0, .warmup_frac = 0.5, .total_steps = 10});
    // warm steps = 5; next-step lrs are 0.2, 0.4, ..., 1.0, then flat
    std::vector<double> lrs;
    Tensor w = Tensor::scalar(1.0, Dtype::F64, true);
    for (int i = 0; i < 7; ++i) {
        lrs.push_back(adam.effective_lr());
        Tensor loss = op::mul(w, w);
        w.zero_grad();
        loss.backward();
        adam.step({{"w", w}});
    }
    CHECK(lrs[0] == doctest::Approx(0.2));
    CHECK(lrs[1] == doctest::Approx(0.4));
    CHECK(lrs[4] == doctest::Approx(1.0));
    CHECK(lrs[5] == doctest::Approx(1.0));
    CHECK(adam.step_count() == 7);
}

TEST_CASE("NaN gradient raises an error naming the parameter") {
    Tensor w = Tensor::scalar(1.0, Dtype::F64, true);
    Tensor loss = op::mul(w, w);
    loss.backward();
    // poison the gradient
    w.node()->grad_d[0] = std::nan("");
    Adam adam({.lr = 0.1});
    CHECK_THROWS_WITH_AS(adam.step({{"w_fc1", w}}), doctest::Contains("w_fc1"), DomainError);
}

TEST_CASE("weight decay pulls weights toward zero") {
    Tensor w = Tensor::scalar(1.0, Dtype::F64, true);
    Tensor loss = op::scale(w, 0.0);
    loss.backward();  // zero gradient, decay only
    Adam adam({.lr = 0.1, .weight_decay = 0.5});
    adam.step({{"w", w}});
    CHECK(w.item() == doctest::Approx(1.0 - 0.1 * 0.5));
}

TEST_CASE("adam converges on a quadratic bowl") {
    Rng rng(5);
    Tensor w = Tensor::uniform({4}, rng, -2, 2, Dtype::F32, true);
    Adam adam({.lr = 0.05});
    for (int i = 0; i < 400; ++i) {
        w.zero_grad();
        Tensor loss = op::sum_all(op::mul(w, w));
        loss.backward();
        adam.step({{"w", w}});
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(w.value_at(i)) < 1e-2);
}
