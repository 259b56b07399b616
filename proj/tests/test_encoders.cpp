#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "czsl/encoders.hpp"
#include "czsl/gradcheck.hpp"

using namespace czsl;

namespace {

EncoderConfig small_encoder() {
    EncoderConfig cfg;
    cfg.blocks = 6;
    cfg.dim = 16;
    cfg.patches = 4;  // 5 tokens with [CLS]
    cfg.heads = 2;
    cfg.ffn_expansion = 2;
    cfg.input_dim = 20;
    cfg.lora_enabled = true;
    cfg.lora_rank = 2;
    return cfg;
}

CompositionSpace small_space(int ns, int no, std::vector<Pair> unseen) {
    CompositionSpace space;
    for (int s = 0; s < ns; ++s) space.states.push_back("s" + std::to_string(s));
    for (int o = 0; o < no; ++o) space.objects.push_back("o" + std::to_string(o));
    std::sort(unseen.begin(), unseen.end());
    for (int s = 0; s < ns; ++s)
        for (int o = 0; o < no; ++o) {
            Pair p{s, o};
            if (!std::binary_search(unseen.begin(), unseen.end(), p))
                space.seen_pairs.push_back(p);
        }
    space.unseen_pairs = std::move(unseen);
    return space;
}

}  // namespace

TEST_CASE("feature stack shape contract") {
    auto cfg = small_encoder();
    VisualEncoder enc(cfg, 11);
    RngStream rng(3);
    auto batch = random_uniform({2, cfg.input_dim}, rng, -1, 1);
    auto stack = enc.encode(batch);
    CHECK(stack.depth() == 6);
    for (const auto& layer : stack.layers)
        CHECK(layer->shape == std::vector<int>{2, 5, 16});
    CHECK(stack.cls_index == 0);
    CHECK(stack.final_cls()->shape == std::vector<int>{2, 16});
}

TEST_CASE("encoder is deterministic in evaluation mode") {
    auto cfg = small_encoder();
    VisualEncoder enc(cfg, 11);
    RngStream rng(4);
    auto batch = random_uniform({3, cfg.input_dim}, rng, -1, 1);
    NoGradGuard guard;
    auto a = enc.encode(batch);
    auto b = enc.encode(batch);
    for (int i = 0; i < a.depth(); ++i)
        CHECK(bit_equal(*a.layers[static_cast<size_t>(i)], *b.layers[static_cast<size_t>(i)]));
}

TEST_CASE("encoder rejects wrong input width") {
    VisualEncoder enc(small_encoder(), 11);
    auto bad = Tensor::zeros({2, 7});
    CHECK_THROWS_AS(enc.encode(bad), DimensionError);
}

TEST_CASE("zero-initialized LoRA leaves the encoder output bit-identical") {
    auto cfg = small_encoder();
    VisualEncoder with_lora(cfg, 11);
    auto cfg_off = cfg;
    cfg_off.lora_enabled = false;
    VisualEncoder without(cfg_off, 11);
    RngStream rng(5);
    auto batch = random_uniform({2, cfg.input_dim}, rng, -1, 1);
    NoGradGuard guard;
    auto a = with_lora.encode(batch);
    auto b = without.encode(batch);
    for (int i = 0; i < a.depth(); ++i)
        CHECK(bit_equal(*a.layers[static_cast<size_t>(i)], *b.layers[static_cast<size_t>(i)]));
}

TEST_CASE("lora_linear algebra") {
    RngStream rng(9);
    auto x = random_uniform({3, 4}, rng, -1, 1);
    auto w0 = random_uniform({4, 4}, rng, -1, 1);

    SUBCASE("zero B is the frozen layer") {
        auto ad = make_lora(4, 4, 2, 1.0, rng);
        auto with = lora_linear(x, w0, nullptr, &ad);
        auto frozen = matmul(x, w0);
        CHECK(bit_equal(*with, *frozen));
    }
    SUBCASE("full rank with identity A reduces to W0 + delta") {
        LoraAdapter ad;
        ad.rank = 4;
        ad.scaling = 1.0;
        ad.a = Tensor::zeros({4, 4}, true);
        for (int i = 0; i < 4; ++i) ad.a->data[static_cast<size_t>(i * 4 + i)] = 1.0;
        ad.b = random_uniform({4, 4}, rng, -1, 1, true);  // delta weight
        auto adapted = lora_linear(x, w0, nullptr, &ad);
        auto sum_w = add(w0, ad.b);
        auto direct = matmul(x, sum_w);
        for (size_t i = 0; i < adapted->data.size(); ++i)
            CHECK(adapted->data[i] == doctest::Approx(direct->data[i]).epsilon(1e-12));
    }
    SUBCASE("gradients reach A and B but not the frozen weight") {
        auto ad = make_lora(4, 4, 2, 1.0, rng);
        // make the delta path active
        for (double& v : ad.b->data) v = rng.uniform(-0.5, 0.5);
        auto loss = sum_all(lora_linear(x, w0, nullptr, &ad));
        backward(loss);
        CHECK(ad.a->grad.size() == ad.a->data.size());
        CHECK(ad.b->grad.size() == ad.b->data.size());
        CHECK(w0->grad.empty());
        bool any = false;
        for (double g : ad.a->grad) any = any || g != 0.0;
        CHECK(any);
    }
    SUBCASE("rank exceeding dimensions rejected") {
        CHECK_THROWS_AS(make_lora(4, 4, 5, 1.0, rng), ParameterError);
    }
}

TEST_CASE("prompt bank shape contracts for closed and open candidate sets") {
    auto space = small_space(2, 3, {{0, 1}, {1, 2}});
    PromptBuilder prompts(2, 3, 16, 21);
    auto closed = space.candidate_pairs(World::Closed);
    CHECK(closed.size() == 6);
    auto sub = std::vector<Pair>{closed.begin(), closed.begin() + 4};
    auto bank = prompts.build(space, sub);
    CHECK(bank.t_com->shape == std::vector<int>{4, 16});
    CHECK(bank.t_state->shape == std::vector<int>{2, 16});
    CHECK(bank.t_obj->shape == std::vector<int>{3, 16});

    auto open = space.candidate_pairs(World::Open);
    CHECK(open.size() == 6);  // full Cartesian product
    auto bank_open = prompts.build(space, open);
    CHECK(bank_open.t_com->shape == std::vector<int>{6, 16});
}

TEST_CASE("prompt bank is a pure function of tokens and candidates") {
    auto space = small_space(3, 3, {{0, 1}});
    PromptBuilder prompts(3, 3, 8, 5);
    auto cands = space.candidate_pairs(World::Closed);
    NoGradGuard guard;
    auto a = prompts.build(space, cands);
    auto b = prompts.build(space, cands);
    CHECK(bit_equal(*a.t_com, *b.t_com));
    CHECK(bit_equal(*a.t_state, *b.t_state));
    CHECK(bit_equal(*a.t_obj, *b.t_obj));
}

TEST_CASE("perturbing one state token changes exactly that state's rows") {
    auto space = small_space(3, 4, {{2, 3}});
    PromptBuilder prompts(3, 4, 12, 33);
    auto cands = space.candidate_pairs(World::Closed);
    NoGradGuard guard;
    auto before = prompts.build(space, cands);
    prompts.state_tokens()->data[static_cast<size_t>(1 * 12 + 3)] += 0.5;  // state 1
    auto after = prompts.build(space, cands);

    for (int r = 0; r < before.t_state->dim(0); ++r) {
        bool changed = false;
        for (int c = 0; c < 12; ++c)
            changed = changed || before.t_state->data[static_cast<size_t>(r * 12 + c)] !=
                                     after.t_state->data[static_cast<size_t>(r * 12 + c)];
        CHECK(changed == (r == 1));
    }
    for (size_t k = 0; k < cands.size(); ++k) {
        bool changed = false;
        for (int c = 0; c < 12; ++c)
            changed = changed || before.t_com->data[k * 12 + static_cast<size_t>(c)] !=
                                     after.t_com->data[k * 12 + static_cast<size_t>(c)];
        CHECK(changed == (cands[k].state == 1));
    }
    CHECK(bit_equal(*before.t_obj, *after.t_obj));
}

TEST_CASE("prompt bank rejects out-of-vocabulary candidates") {
    auto space = small_space(2, 2, {{1, 1}});
    PromptBuilder prompts(2, 2, 8, 1);
    CHECK_THROWS_AS(prompts.build(space, {{2, 0}}), VocabularyError);
    CHECK_THROWS_AS(prompts.build(space, {{0, 5}}), VocabularyError);
}

TEST_CASE("visual heads produce independent outputs and carry gradients") {
    VisualHeads heads(8, 17);
    RngStream rng(2);
    auto cls = random_uniform({3, 8}, rng, -1, 1, true);
    auto out = heads.forward(cls);
    CHECK(out.v_com->shape == std::vector<int>{3, 8});
    CHECK_FALSE(bit_equal(*out.v_com, *out.v_state));
    CHECK_FALSE(bit_equal(*out.v_state, *out.v_obj));

    // All three MLPs and the input receive gradients.
    std::vector<std::pair<std::string, TensorPtr>> leaves{{"cls", cls}};
    for (const auto& p : heads.parameters("heads")) leaves.push_back({p.name, p.value});
    auto report = grad_check(
        [&] {
            auto o = heads.forward(cls);
            return sum_all(add(add(relu(o.v_com), relu(o.v_state)), relu(o.v_obj)));
        },
        leaves, 1e-5, 1e-4);
    CHECK(report.pass());
}

TEST_CASE("zeroed visual heads output zero") {
    VisualHeads heads(8, 3);
    for (const auto& p : heads.parameters("heads"))
        std::fill(p.value->data.begin(), p.value->data.end(), 0.0);
    RngStream rng(1);
    auto out = heads.forward(random_uniform({2, 8}, rng, -1, 1));
    for (const auto& v : {out.v_com, out.v_state, out.v_obj})
        for (double x : v->data) CHECK(x == 0.0);
}

TEST_CASE("visual heads share no parameters") {
    VisualHeads heads(8, 17);
    std::set<const Tensor*> seen;
    for (const auto& p : heads.parameters("heads"))
        CHECK(seen.insert(p.value.get()).second);
    CHECK(seen.size() == 12);
}

TEST_CASE("encoder parameter registry marks only LoRA trainable") {
    VisualEncoder enc(small_encoder(), 11);
    int trainable = 0, frozen = 0;
    for (const auto& p : enc.parameters("encoder")) {
        if (p.trainable) {
            ++trainable;
            CHECK(p.name.find(".lora.") != std::string::npos);
        } else {
            ++frozen;
        }
    }
    CHECK(trainable == 6 * 4 * 2);
    CHECK(frozen > 0);
}
