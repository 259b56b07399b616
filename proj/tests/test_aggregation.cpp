#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "czsl/aggregation.hpp"
#include "czsl/gradcheck.hpp"

using namespace czsl;

namespace {

FeatureStack random_stack(int depth, int b, int l, int d, RngStream& rng, bool rg = false) {
    FeatureStack stack;
    stack.batch = b;
    stack.tokens = l;
    stack.dim = d;
    for (int i = 0; i < depth; ++i)
        stack.layers.push_back(random_uniform({b, l, d}, rng, -1.0, 1.0, rg));
    return stack;
}

// Explicit per-position oracle: linear map, then layer normalization, then
// ReLU, computed with plain loops.
std::vector<double> aggregate_oracle(const std::vector<double>& concat, int rows, int kd, int d,
                                     const Tensor& w, const Tensor& b, const Tensor& gain,
                                     const Tensor& offset, double eps = 1e-5) {
    std::vector<double> out(static_cast<size_t>(rows) * static_cast<size_t>(d));
    for (int r = 0; r < rows; ++r) {
        std::vector<double> mapped(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) {
            double acc = b.data[static_cast<size_t>(j)];
            for (int i = 0; i < kd; ++i)
                acc += concat[static_cast<size_t>(r) * kd + static_cast<size_t>(i)] *
                       w.data[static_cast<size_t>(i) * d + static_cast<size_t>(j)];
            mapped[static_cast<size_t>(j)] = acc;
        }
        double mean = 0.0;
        for (double v : mapped) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : mapped) var += (v - mean) * (v - mean);
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) {
            double normed = (mapped[static_cast<size_t>(j)] - mean) * inv *
                                gain.data[static_cast<size_t>(j)] +
                            offset.data[static_cast<size_t>(j)];
            out[static_cast<size_t>(r) * d + static_cast<size_t>(j)] = normed > 0.0 ? normed : 0.0;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("single-layer window is the layer itself") {
    RngStream rng(1);
    auto stack = random_stack(5, 2, 3, 4, rng);
    CHECK(bit_equal(*concat_window(stack, WindowEnd::FirstN, 1), *stack.layers.front()));
    CHECK(bit_equal(*concat_window(stack, WindowEnd::LastM, 1), *stack.layers.back()));
}

TEST_CASE("last-m window picks trailing layers in order") {
    RngStream rng(2);
    auto stack = random_stack(8, 1, 2, 3, rng);
    auto cat = concat_window(stack, WindowEnd::LastM, 3);
    CHECK(cat->shape == std::vector<int>{1, 2, 9});
    // Layers 6,7,8 (1-indexed) in that order.
    CHECK(bit_equal(*slice(cat, 2, 0, 3), *stack.layers[5]));
    CHECK(bit_equal(*slice(cat, 2, 3, 3), *stack.layers[6]));
    CHECK(bit_equal(*slice(cat, 2, 6, 3), *stack.layers[7]));
}

TEST_CASE("window slicing recovers every layer bit-exactly") {
    RngStream rng(3);
    auto stack = random_stack(6, 2, 4, 5, rng);
    auto cat = concat_window(stack, WindowEnd::FirstN, 4);
    for (int k = 0; k < 4; ++k)
        CHECK(bit_equal(*slice(cat, 2, k * 5, 5), *stack.layers[static_cast<size_t>(k)]));
}

TEST_CASE("oversized windows are configuration errors") {
    RngStream rng(4);
    auto stack = random_stack(3, 1, 2, 2, rng);
    CHECK_THROWS_AS(concat_window(stack, WindowEnd::FirstN, 4), ConfigError);
    CHECK_THROWS_AS(concat_window(stack, WindowEnd::LastM, 5), ConfigError);
}

TEST_CASE("zero input stays zero through the aggregator") {
    Aggregator agg({2, WindowEnd::FirstN, 0.0}, 4, 7, "low");
    RngStream rng(5);
    auto zeros = Tensor::zeros({2, 3, 8});
    auto out = agg.transform(zeros, false, rng);
    for (double v : out->data) CHECK(v == 0.0);
}

TEST_CASE("evaluation-mode output is nonnegative and deterministic") {
    AggregatorConfig cfg{3, WindowEnd::FirstN, 0.5};
    Aggregator agg(cfg, 6, 11, "low");
    RngStream data_rng(6);
    auto stack = random_stack(5, 2, 3, 6, data_rng);
    RngStream d1(1), d2(1);
    NoGradGuard guard;
    auto a = agg.forward(stack, false, d1);
    auto b = agg.forward(stack, false, d2);
    CHECK(bit_equal(*a, *b));
    for (double v : a->data) CHECK(v >= 0.0);
}

TEST_CASE("aggregate matches the explicit-loop oracle") {
    RngStream rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        int b = 1 + static_cast<int>(rng.next_u64() % 3);
        int l = 1 + static_cast<int>(rng.next_u64() % 4);
        int d = 2 + static_cast<int>(rng.next_u64() % 6);
        int k = 1 + static_cast<int>(rng.next_u64() % 3);
        Aggregator agg({k, WindowEnd::FirstN, 0.0}, d, rng.next_u64(), "low");
        auto concat = random_uniform({b, l, k * d}, rng, -2.0, 2.0);
        RngStream drop(0);
        NoGradGuard guard;
        auto got = agg.transform(concat, false, drop);
        auto params = agg.parameters("agg");
        const Tensor& w = *params[0].value;
        const Tensor& bias = *params[1].value;
        const Tensor& gain = *params[2].value;
        const Tensor& offset = *params[3].value;
        auto want = aggregate_oracle(concat->data, b * l, k * d, d, w, bias, gain, offset);
        for (size_t i = 0; i < want.size(); ++i)
            CHECK(std::fabs(got->data[i] - want[i]) < 1e-10);
    }
}

TEST_CASE("identity-configured aggregator reduces to LN-then-ReLU of layer one") {
    int d = 5;
    Aggregator agg({1, WindowEnd::FirstN, 0.0}, d, 3, "low");
    auto params = agg.parameters("agg");
    // Left d x d block identity (window is a single layer), zero bias,
    // unit gain, zero offset.
    auto& w = *params[0].value;
    std::fill(w.data.begin(), w.data.end(), 0.0);
    for (int i = 0; i < d; ++i) w.data[static_cast<size_t>(i * d + i)] = 1.0;
    std::fill(params[1].value->data.begin(), params[1].value->data.end(), 0.0);
    std::fill(params[2].value->data.begin(), params[2].value->data.end(), 1.0);
    std::fill(params[3].value->data.begin(), params[3].value->data.end(), 0.0);

    RngStream rng(12);
    auto stack = random_stack(4, 2, 3, d, rng);
    RngStream drop(0);
    NoGradGuard guard;
    auto got = agg.forward(stack, false, drop);

    auto rows = reshape(stack.layers.front(), {6, d});
    auto ln = relu(layer_norm(rows, params[2].value, params[3].value));
    for (size_t i = 0; i < got->data.size(); ++i)
        CHECK(got->data[i] == doctest::Approx(ln->data[i]).epsilon(1e-12));
}

TEST_CASE("training-mode dropout zeroes about p of surviving activations") {
    AggregatorConfig cfg{1, WindowEnd::FirstN, 0.3};
    Aggregator agg(cfg, 32, 5, "low");
    RngStream data_rng(9);
    auto stack = random_stack(2, 8, 100, 32, data_rng);  // 25600 entries
    RngStream drop_eval(1), drop_train(1);
    NoGradGuard guard;
    auto eval_out = agg.forward(stack, false, drop_eval);
    auto train_out = agg.forward(stack, true, drop_train);
    int64_t alive = 0, dropped = 0;
    for (size_t i = 0; i < eval_out->data.size(); ++i) {
        if (eval_out->data[i] == 0.0) continue;  // ReLU zeros are not dropout's
        ++alive;
        if (train_out->data[i] == 0.0) ++dropped;
    }
    REQUIRE(alive > 10000);
    double fraction = static_cast<double>(dropped) / static_cast<double>(alive);
    double sigma = std::sqrt(0.3 * 0.7 / static_cast<double>(alive));
    CHECK(std::fabs(fraction - 0.3) < 3.0 * sigma);
}

TEST_CASE("gradients flow through the aggregator") {
    RngStream rng(10);
    auto stack = random_stack(4, 2, 2, 4, rng, true);
    Aggregator agg({2, WindowEnd::FirstN, 0.0}, 4, 19, "low");
    std::vector<std::pair<std::string, TensorPtr>> leaves;
    for (const auto& p : agg.parameters("agg")) leaves.push_back({p.name, p.value});
    leaves.push_back({"layer0", stack.layers[0]});
    leaves.push_back({"layer1", stack.layers[1]});
    RngStream drop(0);
    auto report = grad_check(
        [&] { return sum_all(agg.forward(stack, false, drop)); }, leaves, 1e-5, 1e-4);
    CHECK(report.pass());
}

TEST_CASE("low and high aggregators hold disjoint parameters") {
    Aggregator low({2, WindowEnd::FirstN, 0.1}, 4, 3, "low");
    Aggregator high({2, WindowEnd::LastM, 0.1}, 4, 3, "high");
    auto lp = low.parameters("agg.low");
    auto hp = high.parameters("agg.high");
    for (const auto& a : lp)
        for (const auto& b : hp) CHECK(a.value.get() != b.value.get());
    // Same-named streams would alias; distinct names must differ in values.
    CHECK_FALSE(bit_equal(*lp[0].value, *hp[0].value));
}
