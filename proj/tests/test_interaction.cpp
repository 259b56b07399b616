#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "czsl/gradcheck.hpp"
#include "czsl/interaction.hpp"

using namespace czsl;

namespace {

// Explicit-loop multi-head attention oracle over flattened key positions.
std::vector<double> attention_oracle(const Tensor& t, const Tensor& feats,
                                     const CrossAttentionBlock& blk) {
    int n = t.shape[0], d = t.shape[1];
    int kv = feats.shape[0] * feats.shape[1];
    int h = blk.heads, dh = d / h;
    auto project = [&](const double* x, int rows, const Tensor& w, const Tensor& b) {
        std::vector<double> out(static_cast<size_t>(rows) * static_cast<size_t>(d));
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) {
                double acc = b.data[static_cast<size_t>(j)];
                for (int i = 0; i < d; ++i)
                    acc += x[r * d + i] * w.data[static_cast<size_t>(i * d + j)];
                out[static_cast<size_t>(r * d + j)] = acc;
            }
        return out;
    };
    auto q = project(t.data.data(), n, *blk.wq, *blk.bq);
    auto k = project(feats.data.data(), kv, *blk.wk, *blk.bk);
    auto v = project(feats.data.data(), kv, *blk.wv, *blk.bv);

    std::vector<double> ctx(static_cast<size_t>(n) * static_cast<size_t>(d), 0.0);
    for (int head = 0; head < h; ++head) {
        int off = head * dh;
        for (int qi = 0; qi < n; ++qi) {
            std::vector<double> logits(static_cast<size_t>(kv));
            double mx = -1e300;
            for (int ki = 0; ki < kv; ++ki) {
                double dot = 0.0;
                for (int c = 0; c < dh; ++c)
                    dot += q[static_cast<size_t>(qi * d + off + c)] *
                           k[static_cast<size_t>(ki * d + off + c)];
                logits[static_cast<size_t>(ki)] = dot / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[static_cast<size_t>(ki)]);
            }
            double denom = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (int ki = 0; ki < kv; ++ki)
                for (int c = 0; c < dh; ++c)
                    ctx[static_cast<size_t>(qi * d + off + c)] +=
                        logits[static_cast<size_t>(ki)] / denom *
                        v[static_cast<size_t>(ki * d + off + c)];
        }
    }
    auto projected = project(ctx.data(), n, *blk.wo, *blk.bo);
    for (int i = 0; i < n * d; ++i) projected[static_cast<size_t>(i)] += t.data[static_cast<size_t>(i)];
    return projected;
}

CrossAttentionBlock random_block(int d, int h, RngStream& rng) {
    auto blk = CrossAttentionBlock::init(d, h, 0.0, rng);
    // glorot leaves biases zero; randomize them so oracles see the full path
    for (auto* b : {&blk.bq, &blk.bk, &blk.bv, &blk.bo})
        for (double& v : (*b)->data) v = rng.uniform(-0.3, 0.3);
    return blk;
}

}  // namespace

TEST_CASE("single key position collapses softmax to the value path") {
    RngStream rng(1);
    auto blk = random_block(6, 2, rng);
    auto t = random_uniform({2, 6}, rng, -1, 1);
    auto feats = random_uniform({1, 1, 6}, rng, -1, 1);
    RngStream drop(0);
    NoGradGuard guard;
    auto got = cross_attend(t, feats, blk, false, drop);
    auto want = attention_oracle(*t, *feats, blk);
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(got->data[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("zero output projection makes cross attention the identity") {
    RngStream rng(2);
    auto blk = random_block(8, 2, rng);
    std::fill(blk.wo->data.begin(), blk.wo->data.end(), 0.0);
    std::fill(blk.bo->data.begin(), blk.bo->data.end(), 0.0);
    auto t = random_uniform({3, 8}, rng, -1, 1);
    auto feats = random_uniform({2, 2, 8}, rng, -1, 1);
    RngStream drop(0);
    NoGradGuard guard;
    auto out = cross_attend(t, feats, blk, false, drop);
    CHECK(bit_equal(*out, *t));
}

TEST_CASE("cross attention matches the explicit-loop oracle") {
    RngStream rng(3);
    SUBCASE("2 queries x 3 keys, single head") {
        auto blk = random_block(4, 1, rng);
        auto t = random_uniform({2, 4}, rng, -1, 1);
        auto feats = random_uniform({1, 3, 4}, rng, -1, 1);
        RngStream drop(0);
        NoGradGuard guard;
        auto got = cross_attend(t, feats, blk, false, drop);
        auto want = attention_oracle(*t, *feats, blk);
        for (size_t i = 0; i < want.size(); ++i) CHECK(std::fabs(got->data[i] - want[i]) < 1e-10);
    }
    SUBCASE("randomized shapes and head counts") {
        for (int rep = 0; rep < 25; ++rep) {
            int h = 1 + static_cast<int>(rng.next_u64() % 3);
            int d = h * (1 + static_cast<int>(rng.next_u64() % 4));
            int n = 1 + static_cast<int>(rng.next_u64() % 5);
            int b = 1 + static_cast<int>(rng.next_u64() % 2);
            int l = 1 + static_cast<int>(rng.next_u64() % 4);
            auto blk = random_block(d, h, rng);
            auto t = random_uniform({n, d}, rng, -1, 1);
            auto feats = random_uniform({b, l, d}, rng, -1, 1);
            RngStream drop(0);
            NoGradGuard guard;
            auto got = cross_attend(t, feats, blk, false, drop);
            auto want = attention_oracle(*t, *feats, blk);
            for (size_t i = 0; i < want.size(); ++i)
                CHECK(std::fabs(got->data[i] - want[i]) < 1e-10);
        }
    }
}

TEST_CASE("indivisible head count is a configuration error") {
    RngStream rng(4);
    CHECK_THROWS_AS(CrossAttentionBlock::init(6, 4, 0.0, rng), ConfigError);
    InteractionConfig cfg;
    cfg.heads = 5;
    CHECK_THROWS_AS(cfg.validate(6), ConfigError);
}

TEST_CASE("auto head count picks twelve or the largest divisor below") {
    InteractionConfig cfg;
    CHECK(cfg.resolve_heads(48) == 12);
    CHECK(cfg.resolve_heads(64) == 8);
    CHECK(cfg.resolve_heads(7) == 7);
    CHECK(cfg.resolve_heads(10) == 10);
}

TEST_CASE("stage double-residual identity") {
    RngStream rng(5);
    InteractionConfig cfg;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    auto stage = InteractionStage::init(8, cfg, rng);
    std::fill(stage.attn.wo->data.begin(), stage.attn.wo->data.end(), 0.0);
    std::fill(stage.ffn_w2->data.begin(), stage.ffn_w2->data.end(), 0.0);
    std::fill(stage.ffn_b2->data.begin(), stage.ffn_b2->data.end(), 0.0);
    auto t = random_uniform({3, 8}, rng, -1, 1);
    auto feats = random_uniform({2, 3, 8}, rng, -1, 1);
    RngStream drop(0);
    NoGradGuard guard;
    auto out = stage_forward(t, feats, stage, false, drop);
    CHECK(bit_equal(*out, *t));
}

TEST_CASE("stage one output feeds stage two as the query") {
    RngStream rng(6);
    InteractionConfig cfg;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    auto s1 = InteractionStage::init(8, cfg, rng);
    auto s2 = InteractionStage::init(8, cfg, rng);
    auto t = random_uniform({2, 8}, rng, -1, 1);
    auto f_low = random_uniform({1, 3, 8}, rng, -1, 1);
    auto f_high = random_uniform({1, 3, 8}, rng, -1, 1);
    RngStream drop(0);
    NoGradGuard guard;
    auto t1 = stage_forward(t, f_low, s1, false, drop);
    auto chained = stage_forward(t1, f_high, s2, false, drop);
    auto direct = stage_forward(stage_forward(t, f_low, s1, false, drop), f_high, s2, false, drop);
    CHECK(bit_equal(*chained, *direct));
    CHECK_FALSE(bit_equal(*t1, *chained));
}

TEST_CASE("gradients flow through two chained stages") {
    RngStream rng(7);
    InteractionConfig cfg;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    cfg.ffn_expansion = 2;
    auto s1 = InteractionStage::init(6, cfg, rng);
    auto s2 = InteractionStage::init(6, cfg, rng);
    auto t = random_uniform({2, 6}, rng, -1, 1, true);
    auto feats = random_uniform({1, 3, 6}, rng, -1, 1, true);
    std::vector<std::pair<std::string, TensorPtr>> leaves{{"t", t}, {"feats", feats}};
    for (const auto& p : s1.parameters("s1")) leaves.push_back({p.name, p.value});
    for (const auto& p : s2.parameters("s2")) leaves.push_back({p.name, p.value});
    RngStream drop(0);
    auto report = grad_check(
        [&] {
            auto t1 = stage_forward(t, feats, s1, false, drop);
            auto t2 = stage_forward(t1, feats, s2, false, drop);
            return sum_all(relu(t2));
        },
        leaves, 1e-5, 1e-4);
    CHECK(report.pass());
}

TEST_CASE("attention weights per query sum to one for every head") {
    // The invariant holds inside cross_attend; probe it through softmax
    // directly on the same scored shapes.
    RngStream rng(8);
    auto scores = random_uniform({3, 4, 7}, rng, -40.0, 40.0);
    auto w = softmax(scores, 2);
    for (int h = 0; h < 3; ++h)
        for (int q = 0; q < 4; ++q) {
            double sum = 0.0;
            for (int k = 0; k < 7; ++k)
                sum += w->data[static_cast<size_t>((h * 4 + q) * 7 + k)];
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
}

TEST_CASE("fuse implements the affine combination exactly") {
    RngStream rng(9);
    auto t = random_uniform({3, 5}, rng, -1, 1);
    auto t1 = random_uniform({3, 5}, rng, -1, 1);
    auto t2 = random_uniform({3, 5}, rng, -1, 1);

    SUBCASE("zero weights return the base prompt") {
        FusionWeights w{Tensor::scalar(0.0, true), Tensor::scalar(0.0, true)};
        auto out = fuse(t, t1, t2, w);
        CHECK(bit_equal(*out, *t));
    }
    SUBCASE("selector case") {
        FusionWeights w{Tensor::scalar(1.0, true), Tensor::scalar(0.0, true)};
        auto zero = Tensor::zeros({3, 5});
        auto out = fuse(zero, t1, t2, w);
        for (size_t i = 0; i < out->data.size(); ++i)
            CHECK(out->data[i] == doctest::Approx(t1->data[i]).epsilon(1e-15));
    }
    SUBCASE("elementwise oracle at 0.3 / 0.7") {
        FusionWeights w{Tensor::scalar(0.3, true), Tensor::scalar(0.7, true)};
        auto out = fuse(t, t1, t2, w);
        for (size_t i = 0; i < out->data.size(); ++i)
            CHECK(out->data[i] ==
                  doctest::Approx(t->data[i] + 0.3 * t1->data[i] + 0.7 * t2->data[i])
                      .epsilon(1e-14));
    }
    SUBCASE("shape mismatch rejected") {
        FusionWeights w{Tensor::scalar(0.5, true), Tensor::scalar(0.5, true)};
        auto bad = Tensor::zeros({2, 5});
        CHECK_THROWS_AS(fuse(t, bad, t2, w), DimensionError);
    }
}

TEST_CASE("lambda gradients accumulate through fusion") {
    RngStream rng(10);
    auto t = random_uniform({2, 4}, rng, -1, 1);
    auto t1 = random_uniform({2, 4}, rng, -1, 1);
    auto t2 = random_uniform({2, 4}, rng, -1, 1);
    FusionWeights w{Tensor::scalar(0.1, true), Tensor::scalar(0.1, true)};
    auto loss = sum_all(fuse(t, t1, t2, w));
    backward(loss);
    double sum1 = 0.0, sum2 = 0.0;
    for (double v : t1->data) sum1 += v;
    for (double v : t2->data) sum2 += v;
    CHECK(w.lambda1->grad[0] == doctest::Approx(sum1).epsilon(1e-12));
    CHECK(w.lambda2->grad[0] == doctest::Approx(sum2).epsilon(1e-12));
}
