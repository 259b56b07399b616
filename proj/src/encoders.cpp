#include "czsl/encoders.hpp"

#include <cmath>

namespace czsl {

namespace {

// Shared direction for the visual-head and text-mix output biases. Starting
// both modalities inside one narrow cone keeps cosine spreads small enough
// that the fixed temperature produces workable logits from random init.
constexpr double kAnchorScale = 4.0;

TensorPtr anchor_vector(int dim, uint64_t seed) {
    auto rng = rng_stream(seed, "anchor");
    auto v = random_normal({dim}, rng);
    double norm = 0.0;
    for (double x : v->data) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v->data) x = x / norm * kAnchorScale;
    return v;
}

}  // namespace

TensorPtr FeatureStack::final_cls() const {
    auto last = layers.back();
    auto row = slice(last, 1, cls_index, 1);  // [b, 1, d]
    return reshape(row, {batch, dim});
}

LoraAdapter make_lora(int in_dim, int out_dim, int rank, double scaling, RngStream& rng) {
    if (rank <= 0 || rank > std::min(in_dim, out_dim))
        throw ParameterError("lora rank " + std::to_string(rank) + " exceeds layer dims " +
                             std::to_string(in_dim) + "x" + std::to_string(out_dim));
    LoraAdapter ad;
    ad.rank = rank;
    ad.scaling = scaling;
    ad.a = random_normal({in_dim, rank}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)), true);
    ad.b = Tensor::zeros({rank, out_dim}, true);
    return ad;
}

TensorPtr lora_linear(const TensorPtr& x, const TensorPtr& w0, const TensorPtr& bias,
                      const LoraAdapter* adapter) {
    auto base = matmul(x, w0);
    if (bias) base = add_rowvec(base, bias);
    if (!adapter) return base;
    auto delta = matmul(matmul(x, adapter->a), adapter->b);
    if (adapter->scaling != 1.0) delta = scale(delta, adapter->scaling);
    return add(base, delta);
}

void EncoderConfig::validate() const {
    if (blocks <= 0 || dim <= 0 || patches <= 0 || input_dim <= 0)
        throw ConfigError("encoder dimensions must be positive");
    if (heads <= 0 || dim % heads != 0)
        throw ConfigError("encoder dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    if (ffn_expansion <= 0) throw ConfigError("encoder ffn_expansion must be positive");
    if (patches > input_dim)
        throw ConfigError("more patches than input coordinates: " + std::to_string(patches) +
                          " > " + std::to_string(input_dim));
    if (lora_enabled && (lora_rank <= 0 || lora_rank > dim))
        throw ConfigError("lora rank " + std::to_string(lora_rank) + " invalid for dim " +
                          std::to_string(dim));
}

VisualEncoder::VisualEncoder(const EncoderConfig& config, uint64_t seed) : config_(config) {
    config_.validate();
    int d = config_.dim;
    auto rng = rng_stream(seed, "init.encoder");
    // Separate stream: frozen weights stay identical whether or not
    // adapters are attached.
    auto lora_rng = rng_stream(seed, "init.encoder.lora");

    // Contiguous coordinate windows, one per patch position; the remainder
    // goes to the last window.
    int base = config_.input_dim / config_.patches;
    for (int j = 0; j < config_.patches; ++j) {
        int start = j * base;
        int len = (j == config_.patches - 1) ? config_.input_dim - start : base;
        window_starts_.push_back(start);
        window_lengths_.push_back(len);
        auto map = random_normal({len, d}, rng, 1.0 / std::sqrt(static_cast<double>(len)));
        patch_maps_.push_back(map);
    }
    cls_token_ = random_normal({d}, rng);

    for (int blk = 0; blk < config_.blocks; ++blk) {
        Block b;
        b.ln1_gain = Tensor::full({d}, 1.0);
        b.ln1_offset = Tensor::zeros({d});
        b.ln2_gain = Tensor::full({d}, 1.0);
        b.ln2_offset = Tensor::zeros({d});
        b.wq = random_orthogonal(d, d, rng);
        b.wk = random_orthogonal(d, d, rng);
        b.wv = random_orthogonal(d, d, rng);
        b.wo = random_orthogonal(d, d, rng);
        b.bq = Tensor::zeros({d});
        b.bk = Tensor::zeros({d});
        b.bv = Tensor::zeros({d});
        b.bo = Tensor::zeros({d});
        int hidden = d * config_.ffn_expansion;
        b.ffn_w1 = random_orthogonal(d, hidden, rng);
        b.ffn_b1 = Tensor::zeros({hidden});
        b.ffn_w2 = random_orthogonal(hidden, d, rng);
        b.ffn_b2 = Tensor::zeros({d});
        if (config_.lora_enabled) {
            b.lq = make_lora(d, d, config_.lora_rank, config_.lora_scale, lora_rng);
            b.lk = make_lora(d, d, config_.lora_rank, config_.lora_scale, lora_rng);
            b.lv = make_lora(d, d, config_.lora_rank, config_.lora_scale, lora_rng);
            b.lo = make_lora(d, d, config_.lora_rank, config_.lora_scale, lora_rng);
        }
        blocks_.push_back(std::move(b));
    }
}

TensorPtr VisualEncoder::embed(const TensorPtr& batch) const {
    if (batch->rank() != 2 || batch->dim(1) != config_.input_dim)
        throw DimensionError("encoder expects [b," + std::to_string(config_.input_dim) +
                             "], got " + shape_str(batch->shape));
    int b = batch->dim(0), d = config_.dim;
    std::vector<TensorPtr> tokens;
    // [CLS] first: a frozen embedding broadcast over the batch.
    tokens.push_back(add_rowvec(Tensor::zeros({b, d}), cls_token_));
    for (int j = 0; j < config_.patches; ++j) {
        auto window = slice(batch, 1, window_starts_[static_cast<size_t>(j)],
                            window_lengths_[static_cast<size_t>(j)]);
        tokens.push_back(matmul(window, patch_maps_[static_cast<size_t>(j)]));
    }
    auto flat = concat_last_axis(tokens);  // [b, l*d], position-major
    return reshape(flat, {b, static_cast<int>(tokens.size()), d});
}

TensorPtr VisualEncoder::self_attention(const TensorPtr& x, const Block& blk) const {
    int b = x->dim(0), l = x->dim(1), d = x->dim(2);
    int h = config_.heads, dh = d / h;
    auto rows = reshape(x, {b * l, d});
    auto split_heads = [&](const TensorPtr& proj) {
        // [b*l, d] -> [b*h, l, dh]
        auto four = reshape(proj, {b, l, h, dh});
        return reshape(permute(four, {0, 2, 1, 3}), {b * h, l, dh});
    };
    auto q = split_heads(lora_linear(rows, blk.wq, blk.bq, blk.lq ? &*blk.lq : nullptr));
    auto k = split_heads(lora_linear(rows, blk.wk, blk.bk, blk.lk ? &*blk.lk : nullptr));
    auto v = split_heads(lora_linear(rows, blk.wv, blk.bv, blk.lv ? &*blk.lv : nullptr));
    auto scores = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn = softmax(scores, 2);
    auto ctx = matmul(attn, v);  // [b*h, l, dh]
    auto joined = reshape(permute(reshape(ctx, {b, h, l, dh}), {0, 2, 1, 3}), {b * l, d});
    auto out = lora_linear(joined, blk.wo, blk.bo, blk.lo ? &*blk.lo : nullptr);
    return reshape(out, {b, l, d});
}

FeatureStack VisualEncoder::encode(const TensorPtr& batch) const {
    auto x = embed(batch);
    int b = x->dim(0), l = x->dim(1), d = x->dim(2);
    FeatureStack stack;
    stack.cls_index = 0;
    stack.batch = b;
    stack.tokens = l;
    stack.dim = d;
    for (const Block& blk : blocks_) {
        auto rows = reshape(x, {b * l, d});
        auto normed1 = reshape(layer_norm(rows, blk.ln1_gain, blk.ln1_offset), {b, l, d});
        x = add(x, self_attention(normed1, blk));
        auto rows2 = reshape(x, {b * l, d});
        auto normed2 = layer_norm(rows2, blk.ln2_gain, blk.ln2_offset);
        auto hidden = relu(add_rowvec(matmul(normed2, blk.ffn_w1), blk.ffn_b1));
        auto ffn = add_rowvec(matmul(hidden, blk.ffn_w2), blk.ffn_b2);
        x = add(x, reshape(ffn, {b, l, d}));
        stack.layers.push_back(x);
    }
    return stack;
}

ParamList VisualEncoder::parameters(const std::string& prefix) const {
    ParamList out;
    for (size_t j = 0; j < patch_maps_.size(); ++j)
        out.push_back({prefix + ".patch" + std::to_string(j), patch_maps_[j], false});
    out.push_back({prefix + ".cls", cls_token_, false});
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const Block& b = blocks_[i];
        std::string bp = prefix + ".block" + std::to_string(i);
        out.push_back({bp + ".ln1.gain", b.ln1_gain, false});
        out.push_back({bp + ".ln1.offset", b.ln1_offset, false});
        out.push_back({bp + ".ln2.gain", b.ln2_gain, false});
        out.push_back({bp + ".ln2.offset", b.ln2_offset, false});
        out.push_back({bp + ".attn.wq", b.wq, false});
        out.push_back({bp + ".attn.bq", b.bq, false});
        out.push_back({bp + ".attn.wk", b.wk, false});
        out.push_back({bp + ".attn.bk", b.bk, false});
        out.push_back({bp + ".attn.wv", b.wv, false});
        out.push_back({bp + ".attn.bv", b.bv, false});
        out.push_back({bp + ".attn.wo", b.wo, false});
        out.push_back({bp + ".attn.bo", b.bo, false});
        out.push_back({bp + ".ffn.w1", b.ffn_w1, false});
        out.push_back({bp + ".ffn.b1", b.ffn_b1, false});
        out.push_back({bp + ".ffn.w2", b.ffn_w2, false});
        out.push_back({bp + ".ffn.b2", b.ffn_b2, false});
        auto lora_params = [&](const char* tag, const std::optional<LoraAdapter>& ad) {
            if (!ad) return;
            out.push_back({bp + ".lora." + tag + ".a", ad->a, true});
            out.push_back({bp + ".lora." + tag + ".b", ad->b, true});
        };
        lora_params("q", b.lq);
        lora_params("k", b.lk);
        lora_params("v", b.lv);
        lora_params("o", b.lo);
    }
    return out;
}

void VisualEncoder::reset_lora_deltas() {
    for (Block& b : blocks_)
        for (auto* ad : {&b.lq, &b.lk, &b.lv, &b.lo})
            if (*ad) std::fill((*ad)->b->data.begin(), (*ad)->b->data.end(), 0.0);
}

PromptBuilder::PromptBuilder(int num_states, int num_objects, int dim, uint64_t seed)
    : dim_(dim) {
    auto rng = rng_stream(seed, "init.prompts");
    state_tokens_ = random_normal({num_states, dim}, rng, 0.5, true);
    object_tokens_ = random_normal({num_objects, dim}, rng, 0.5, true);
    auto word = [&] { return random_normal({dim}, rng, 0.5); };
    auto a = word(), photo = word(), of = word();
    ctx_prefix_ = Tensor::create({dim});
    for (int i = 0; i < dim; ++i)
        ctx_prefix_->data[static_cast<size_t>(i)] = a->data[static_cast<size_t>(i)] +
                                                    photo->data[static_cast<size_t>(i)] +
                                                    of->data[static_cast<size_t>(i)];
    generic_object_ = word();
    mix_w_ = random_orthogonal(dim, dim, rng);
    mix_b_ = anchor_vector(dim, seed);
}

PromptBank PromptBuilder::build(const CompositionSpace& space,
                                const std::vector<Pair>& candidates) const {
    for (const Pair& p : candidates) {
        if (p.state < 0 || p.state >= state_tokens_->dim(0))
            throw VocabularyError("candidate state index " + std::to_string(p.state) +
                                  " unknown to the token table");
        if (p.object < 0 || p.object >= object_tokens_->dim(0))
            throw VocabularyError("candidate object index " + std::to_string(p.object) +
                                  " unknown to the token table");
    }
    std::vector<int> pair_states, pair_objects;
    pair_states.reserve(candidates.size());
    pair_objects.reserve(candidates.size());
    for (const Pair& p : candidates) {
        pair_states.push_back(p.state);
        pair_objects.push_back(p.object);
    }
    std::vector<int> all_states(static_cast<size_t>(space.num_states()));
    std::vector<int> all_objects(static_cast<size_t>(space.num_objects()));
    for (int i = 0; i < space.num_states(); ++i) all_states[static_cast<size_t>(i)] = i;
    for (int i = 0; i < space.num_objects(); ++i) all_objects[static_cast<size_t>(i)] = i;

    auto encode = [&](const TensorPtr& pooled) {
        return add_rowvec(matmul(pooled, mix_w_), mix_b_);
    };
    // "a photo of [state] [object]": five tokens pooled by mean.
    auto com_pool = scale(add_rowvec(add(gather_rows(state_tokens_, pair_states),
                                         gather_rows(object_tokens_, pair_objects)),
                                     ctx_prefix_),
                          1.0 / 5.0);
    // "a photo of [state] object"
    auto state_ctx = Tensor::create({dim_});
    for (int i = 0; i < dim_; ++i)
        state_ctx->data[static_cast<size_t>(i)] =
            ctx_prefix_->data[static_cast<size_t>(i)] + generic_object_->data[static_cast<size_t>(i)];
    auto state_pool =
        scale(add_rowvec(gather_rows(state_tokens_, all_states), state_ctx), 1.0 / 5.0);
    // "a photo of [object]": four tokens.
    auto obj_pool =
        scale(add_rowvec(gather_rows(object_tokens_, all_objects), ctx_prefix_), 1.0 / 4.0);

    PromptBank bank;
    bank.t_com = encode(com_pool);
    bank.t_state = encode(state_pool);
    bank.t_obj = encode(obj_pool);
    return bank;
}

ParamList PromptBuilder::parameters(const std::string& prefix) const {
    return {
        {prefix + ".state_tokens", state_tokens_, true},
        {prefix + ".object_tokens", object_tokens_, true},
        {prefix + ".ctx_prefix", ctx_prefix_, false},
        {prefix + ".generic_object", generic_object_, false},
        {prefix + ".mix.w", mix_w_, false},
        {prefix + ".mix.b", mix_b_, false},
    };
}

VisualHeads::VisualHeads(int dim, uint64_t seed) {
    auto rng = rng_stream(seed, "init.heads");
    auto anchor = anchor_vector(dim, seed);
    auto make = [&] {
        Mlp m;
        m.w1 = glorot_uniform(dim, dim, rng);
        m.b1 = Tensor::zeros({dim}, true);
        m.w2 = glorot_uniform(dim, dim, rng);
        m.b2 = Tensor::from({dim}, anchor->data, true);
        return m;
    };
    com_ = make();
    state_ = make();
    obj_ = make();
}

TensorPtr VisualHeads::run(const Mlp& m, const TensorPtr& x) const {
    return add_rowvec(matmul(relu(add_rowvec(matmul(x, m.w1), m.b1)), m.w2), m.b2);
}

VisualHeads::Outputs VisualHeads::forward(const TensorPtr& cls) const {
    return {run(com_, cls), run(state_, cls), run(obj_, cls)};
}

ParamList VisualHeads::parameters(const std::string& prefix) const {
    ParamList out;
    auto add_mlp = [&](const char* tag, const Mlp& m) {
        std::string mp = prefix + "." + tag;
        out.push_back({mp + ".w1", m.w1, true});
        out.push_back({mp + ".b1", m.b1, true});
        out.push_back({mp + ".w2", m.w2, true});
        out.push_back({mp + ".b2", m.b2, true});
    };
    add_mlp("com", com_);
    add_mlp("state", state_);
    add_mlp("obj", obj_);
    return out;
}

}  // namespace czsl
