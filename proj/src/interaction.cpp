#include "czsl/interaction.hpp"

#include <cmath>

namespace czsl {

int InteractionConfig::resolve_heads(int dim) const {
    if (heads > 0) return heads;
    for (int h = std::min(12, dim); h >= 1; --h)
        if (dim % h == 0) return h;
    return 1;
}

void InteractionConfig::validate(int dim) const {
    int h = resolve_heads(dim);
    if (dim % h != 0)
        throw ConfigError("interaction dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(h));
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("interaction dropout must lie in [0,1)");
    if (ffn_expansion <= 0) throw ConfigError("interaction ffn_expansion must be positive");
}

CrossAttentionBlock CrossAttentionBlock::init(int dim, int heads, double dropout_p,
                                              RngStream& rng) {
    if (heads <= 0 || dim % heads != 0)
        throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    CrossAttentionBlock b;
    b.heads = heads;
    b.dropout_p = dropout_p;
    b.wq = glorot_uniform(dim, dim, rng);
    b.wk = glorot_uniform(dim, dim, rng);
    b.wv = glorot_uniform(dim, dim, rng);
    b.wo = glorot_uniform(dim, dim, rng);
    b.bq = Tensor::zeros({dim}, true);
    b.bk = Tensor::zeros({dim}, true);
    b.bv = Tensor::zeros({dim}, true);
    b.bo = Tensor::zeros({dim}, true);
    return b;
}

ParamList CrossAttentionBlock::parameters(const std::string& prefix) const {
    return {
        {prefix + ".wq", wq, true}, {prefix + ".bq", bq, true},
        {prefix + ".wk", wk, true}, {prefix + ".bk", bk, true},
        {prefix + ".wv", wv, true}, {prefix + ".bv", bv, true},
        {prefix + ".wo", wo, true}, {prefix + ".bo", bo, true},
    };
}

TensorPtr cross_attend(const TensorPtr& t, const TensorPtr& features,
                       const CrossAttentionBlock& block, bool train, RngStream& rng) {
    if (t->rank() != 2)
        throw DimensionError("cross_attend prompts must be [N,d], got " + shape_str(t->shape));
    if (features->rank() != 3)
        throw DimensionError("cross_attend features must be [b,l,d], got " +
                             shape_str(features->shape));
    int n = t->dim(0), d = t->dim(1);
    if (features->dim(2) != d)
        throw DimensionError("prompt dim " + std::to_string(d) + " vs feature dim " +
                             std::to_string(features->dim(2)));
    int h = block.heads, dh = d / h;
    int kv = features->dim(0) * features->dim(1);
    auto keys_rows = reshape(features, {kv, d});

    auto split = [&](const TensorPtr& proj, int rows) {
        return permute(reshape(proj, {rows, h, dh}), {1, 0, 2});  // [h, rows, dh]
    };
    auto q = split(add_rowvec(matmul(t, block.wq), block.bq), n);
    auto k = split(add_rowvec(matmul(keys_rows, block.wk), block.bk), kv);
    auto v = split(add_rowvec(matmul(keys_rows, block.wv), block.bv), kv);

    auto scores = scale(matmul(q, permute(k, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(dh)));  // [h, n, kv]
    auto weights = softmax(scores, 2);
    weights = dropout(weights, block.dropout_p, train, rng);
    auto ctx = matmul(weights, v);  // [h, n, dh]
    auto joined = reshape(permute(ctx, {1, 0, 2}), {n, d});
    auto projected = add_rowvec(matmul(joined, block.wo), block.bo);
    return add(projected, t);
}

InteractionStage InteractionStage::init(int dim, const InteractionConfig& config,
                                        RngStream& rng) {
    InteractionStage s;
    s.attn = CrossAttentionBlock::init(dim, config.resolve_heads(dim), config.dropout, rng);
    int hidden = dim * config.ffn_expansion;
    s.ffn_w1 = glorot_uniform(dim, hidden, rng);
    s.ffn_b1 = Tensor::zeros({hidden}, true);
    s.ffn_w2 = glorot_uniform(hidden, dim, rng);
    s.ffn_b2 = Tensor::zeros({dim}, true);
    return s;
}

ParamList InteractionStage::parameters(const std::string& prefix) const {
    ParamList out = attn.parameters(prefix + ".attn");
    out.push_back({prefix + ".ffn.w1", ffn_w1, true});
    out.push_back({prefix + ".ffn.b1", ffn_b1, true});
    out.push_back({prefix + ".ffn.w2", ffn_w2, true});
    out.push_back({prefix + ".ffn.b2", ffn_b2, true});
    return out;
}

TensorPtr stage_forward(const TensorPtr& t, const TensorPtr& features,
                        const InteractionStage& stage, bool train, RngStream& rng) {
    auto attended = cross_attend(t, features, stage.attn, train, rng);
    auto hidden = relu(add_rowvec(matmul(attended, stage.ffn_w1), stage.ffn_b1));
    auto mlp = add_rowvec(matmul(hidden, stage.ffn_w2), stage.ffn_b2);
    return add(mlp, attended);
}

TensorPtr fuse(const TensorPtr& t, const TensorPtr& t1, const TensorPtr& t2,
               const FusionWeights& weights) {
    if (!same_shape(*t, *t1) || !same_shape(*t, *t2))
        throw DimensionError("fuse operands disagree: " + shape_str(t->shape) + " vs " +
                             shape_str(t1->shape) + " vs " + shape_str(t2->shape));
    return add(t, add(scalar_mul(weights.lambda1, t1), scalar_mul(weights.lambda2, t2)));
}

}  // namespace czsl
