#include <doctest.h>

#include <cmath>

#include "qal/errors.hpp"
#include "qal/tensor.hpp"
#include "test_util.hpp"

using namespace qal;
using namespace qal::testutil;

TEST_CASE("matmul identity and hand-computed product") {
    Tape tape;
    Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor r = matmul(tape, i2, i2);
    for (size_t i = 0; i < 4; ++i) CHECK(r.data()[i] == i2.data()[i]);

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {1, 1});
    Tensor p = matmul(tape, a, b);
    CHECK(p.data()[0] == 3.0);
    CHECK(p.data()[1] == 7.0);
}

TEST_CASE("matmul rejects mismatched shapes") {
    Tape tape;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(tape, a, b), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(42);
    Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
    Tensor b = random_tensor({4, 2}, rng, -1, 1, true);

    Tape tape;
    Tensor loss = sum_all(tape, matmul(tape, a, b));
    tape.backward(loss);

    auto f = [&](const std::vector<double>& x) {
        Tensor ax = Tensor::from_data({3, 4}, x);
        Tape t(false);
        return sum_all(t, matmul(t, ax, b)).item();
    };
    const auto want = numeric_grad(f, a.vec());
    CHECK(max_rel_err(a.grad(), want) < 1e-6);
}

TEST_CASE("conv2d all-ones and delta kernel") {
    Tape tape;
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(tape, x, w, b, 1, 0);
    CHECK(y.size() == 1);
    CHECK(y.item() == doctest::Approx(9.0));

    // 1 at kernel center with padding 1 reproduces the input.
    Rng rng(7);
    Tensor img = random_tensor({1, 1, 4, 4}, rng);
    Tensor delta = Tensor::zeros({1, 1, 3, 3});
    delta.data()[4] = 1.0;
    Tensor out = conv2d(tape, img, delta, b, 1, 1);
    REQUIRE(out.shape() == Shape{1, 1, 4, 4});
    for (size_t i = 0; i < img.size(); ++i) CHECK(out.data()[i] == doctest::Approx(img.data()[i]));
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    Tape tape;
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    Tensor b = Tensor::zeros({1});
    CHECK_THROWS_AS(conv2d(tape, x, w, b, 1, 0), DimensionError);
}

TEST_CASE("conv2d gradients match finite differences on 2x3x5x5") {
    Rng rng(3);
    Tensor x = random_tensor({2, 3, 5, 5}, rng, -1, 1, true);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
    Tensor b = random_tensor({4}, rng, -1, 1, true);

    Tape tape;
    Tensor loss = sum_all(tape, conv2d(tape, x, w, b, 2, 1));
    tape.backward(loss);

    auto check_input = [&](Tensor& target) {
        auto f = [&](const std::vector<double>& v) {
            std::vector<double> saved = target.vec();
            target.vec() = v;
            Tape t(false);
            const double out = sum_all(t, conv2d(t, x, w, b, 2, 1)).item();
            target.vec() = saved;
            return out;
        };
        return numeric_grad(f, target.vec());
    };
    CHECK(max_rel_err(x.grad(), check_input(x)) < 1e-6);
    CHECK(max_rel_err(w.grad(), check_input(w)) < 1e-6);
    CHECK(max_rel_err(b.grad(), check_input(b)) < 1e-6);
}

TEST_CASE("cross entropy reference values") {
    Tape tape;
    SUBCASE("uniform logits give ln C") {
        Tensor logits = Tensor::zeros({1, 10});
        CHECK(cross_entropy(tape, logits, {3}).item() == doctest::Approx(std::log(10.0)));
    }
    SUBCASE("saturated softmax stays finite") {
        Tensor logits = Tensor::from_data({1, 2}, {1000.0, 0.0});
        const double v = cross_entropy(tape, logits, {0}).item();
        CHECK(std::isfinite(v));
        CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("direct softmax evaluation") {
        Tensor logits = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0});
        CHECK(cross_entropy(tape, logits, {2}).item() == doctest::Approx(0.40760596).epsilon(1e-7));
    }
    SUBCASE("label out of range") {
        Tensor logits = Tensor::zeros({1, 3});
        CHECK_THROWS_AS(cross_entropy(tape, logits, {3}), ContractError);
    }
}

TEST_CASE("cross entropy never NaN for logits up to 1e4") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tape tape;
        Tensor logits = random_tensor({4, 6}, rng, -1e4, 1e4, true);
        Tensor loss = cross_entropy(tape, logits, {0, 1, 2, 3});
        CHECK(std::isfinite(loss.item()));
        tape.backward(loss);
        for (double g : logits.grad()) CHECK(std::isfinite(g));
    }
}

TEST_CASE("backward basics") {
    SUBCASE("sum gradient is ones") {
        Tensor x = Tensor::full({2, 3}, 2.0, true);
        Tape tape;
        tape.backward(sum_all(tape, x));
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SUBCASE("cross entropy gradient equals softmax minus one-hot") {
        Tensor logits = Tensor::from_data({1, 3}, {0.5, -1.0, 2.0}, true);
        Tape tape;
        tape.backward(cross_entropy(tape, logits, {1}));
        const auto p = softmax_row(logits.data(), 3);
        CHECK(logits.grad()[0] == doctest::Approx(p[0]));
        CHECK(logits.grad()[1] == doctest::Approx(p[1] - 1.0));
        CHECK(logits.grad()[2] == doctest::Approx(p[2]));
    }
    SUBCASE("repeated backward accumulates") {
        Tensor x = Tensor::full({3}, 1.0, true);
        Tape tape;
        Tensor loss = sum_all(tape, x);
        tape.backward(loss);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 2.0);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tensor x = Tensor::full({3}, 1.0, true);
        Tape tape;
        Tensor y = relu(tape, x);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
}

TEST_CASE("every differentiable op matches finite differences") {
    Rng rng(99);
    // Composed graph touching relu, maxpool, reshape, linear, scalar algebra.
    Tensor x = random_tensor({2, 2, 4, 4}, rng, -1, 1, true);
    Tensor w = random_tensor({3, 8}, rng, -1, 1, true);
    Tensor b = random_tensor({3}, rng, -1, 1, true);

    auto run = [&](Tape& t) {
        Tensor h = maxpool2d(t, relu(t, x), 2);
        Tensor flat = reshape(t, h, {2, 8});
        Tensor logits = linear(t, flat, w, b);
        Tensor ce = cross_entropy(t, logits, {0, 2});
        Tensor pen = square(t, sub_from_const(t, 2.0, ce));
        return add(t, scale(t, mean_all(t, mul(t, flat, flat)), 0.5), pen);
    };
    Tape tape;
    tape.backward(run(tape));

    auto f = [&](const std::vector<double>& v) {
        std::vector<double> saved = x.vec();
        x.vec() = v;
        Tape t(false);
        const double out = run(t).item();
        x.vec() = saved;
        return out;
    };
    // Step away from relu kinks: inputs are random, kink measure zero.
    CHECK(max_rel_err(x.grad(), numeric_grad(f, x.vec())) < 1e-4);
}

TEST_CASE("tape replay is deterministic") {
    auto run = [] {
        Rng rng(5);
        Tensor x = random_tensor({4, 3}, rng, -1, 1, true);
        Tensor w = random_tensor({2, 3}, rng, -1, 1, true);
        Tensor b = random_tensor({2}, rng, -1, 1, true);
        Tape tape;
        Tensor loss = cross_entropy(tape, linear(tape, x, w, b), {0, 1, 0, 1});
        tape.backward(loss);
        std::vector<double> out = {loss.item()};
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    const auto a = run();
    const auto c = run();
    REQUIRE(a.size() == c.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == c[i]);
}

TEST_CASE("hvp central differences") {
    // Quadratic 0.5 theta^T diag(1,2,3) theta: gradient = diag .* theta.
    auto grad_fn = [](const std::vector<double>& t) {
        return std::vector<double>{t[0], 2.0 * t[1], 3.0 * t[2]};
    };
    const std::vector<double> theta{0.3, -0.7, 1.1};

    SUBCASE("picks out Hessian columns") {
        const auto hv = hvp_central(grad_fn, theta, {1, 0, 0}, 1e-4);
        CHECK(std::abs(hv[0] - 1.0) < 1e-6);
        CHECK(std::abs(hv[1]) < 1e-6);
        CHECK(std::abs(hv[2]) < 1e-6);
    }
    SUBCASE("zero direction rejected") {
        CHECK_THROWS_AS(hvp_central(grad_fn, theta, {0, 0, 0}, 1e-4), ContractError);
    }
    SUBCASE("linear loss has zero Hessian") {
        auto const_grad = [](const std::vector<double>&) {
            return std::vector<double>{1.0, -2.0, 0.5};
        };
        const auto hv = hvp_central(const_grad, theta, {1, 1, 1}, 1e-4);
        for (double v : hv) CHECK(std::abs(v) < 1e-8);
    }
    SUBCASE("non-positive eps rejected") {
        CHECK_THROWS_AS(hvp_central(grad_fn, theta, {1, 0, 0}, 0.0), ContractError);
    }
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), DimensionError);
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
    Tensor c = t.clone();
    c.data()[0] = 5.0;
    CHECK(t.data()[0] == 0.0);
}
