#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "czsl/gradcheck.hpp"
#include "czsl/tensor.hpp"

using namespace czsl;

TEST_CASE("linear function: analytic gradient is all ones") {
    RngStream rng(1);
    auto x = random_uniform({7}, rng, -1.0, 1.0, true);
    auto report = grad_check([&] { return sum_all(x); }, {{"x", x}}, 1e-5, 1e-10, 0, 200, 1.0);
    CHECK(report.pass());
    CHECK(report.max_rel_err < 1e-10);
    x->zero_grad();
    auto loss = sum_all(x);
    backward(loss);
    for (double g : x->grad) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("softmax-then-pick matches the analytic Jacobian row") {
    auto x = Tensor::from({3}, {0.2, -0.4, 0.9}, true);
    int k = 1;
    auto pick = [&] {
        auto y = softmax(x, 0);
        return sum_all(slice(y, 0, k, 1));
    };
    auto report = grad_check(pick, {{"x", x}}, 1e-6, 1e-6);
    CHECK(report.pass());

    x->zero_grad();
    auto loss = pick();
    backward(loss);
    // d softmax_k / d x_j = y_k (delta_kj - y_j)
    auto y = softmax(x, 0);
    for (int j = 0; j < 3; ++j) {
        double expect = y->data[static_cast<size_t>(k)] * ((j == k ? 1.0 : 0.0) - y->data[static_cast<size_t>(j)]);
        CHECK(x->grad[static_cast<size_t>(j)] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("large leaves are subsampled") {
    RngStream rng(2);
    auto x = random_uniform({30, 30}, rng, -1.0, 1.0, true);  // 900 > 200 coordinates
    auto report = grad_check([&] { return sum_all(relu(x)); }, {{"x", x}}, 1e-5, 1e-6, 9);
    CHECK(report.coords_checked == 200);
    CHECK(report.pass());
}

TEST_CASE("failing coordinates are listed") {
    auto x = Tensor::from({2}, {0.3, 0.6}, true);
    // A deliberately wrong adjoint: build a sabotaged op via scale + manual grad edit
    // is invasive, so instead check that an impossible tolerance reports failures.
    auto report = grad_check([&] { return sum_all(scale(x, 3.0)); }, {{"x", x}}, 1e-2, 1e-18);
    CHECK_FALSE(report.failures.empty());
    CHECK(report.failures.front().leaf == "x");
}

TEST_CASE("non-finite function values raise an evaluation error") {
    auto x = Tensor::from({1}, {1e308}, true);
    auto f = [&] {
        auto doubled = scale(x, 1e308);  // overflows to inf
        return sum_all(doubled);
    };
    CHECK_THROWS_AS(grad_check(f, {{"x", x}}, 1e-5, 1e-4), EvaluationError);
}

TEST_CASE("non-positive step rejected") {
    auto x = Tensor::scalar(1.0, true);
    CHECK_THROWS_AS(grad_check([&] { return sum_all(x); }, {{"x", x}}, 0.0, 1e-4),
                    ParameterError);
}
