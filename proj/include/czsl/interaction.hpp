#pragma once

#include <string>

#include "czsl/params.hpp"
#include "czsl/tensor.hpp"

namespace czsl {

struct InteractionConfig {
    int heads = 0;  // 0 = auto: 12 when divisible, else the largest divisor <= 12
    double dropout = 0.1;
    int ffn_expansion = 4;
    double lambda_init = 0.1;

    int resolve_heads(int dim) const;
    void validate(int dim) const;
};

// Multi-head cross-attention of prompt queries over the batch's visual
// positions, with output projection and residual. Dropout applies to the
// attention weights.
struct CrossAttentionBlock {
    TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 1;
    double dropout_p = 0.0;

    static CrossAttentionBlock init(int dim, int heads, double dropout_p, RngStream& rng);
    ParamList parameters(const std::string& prefix) const;
};

// t: [N, d] prompts; features: [b, l, d], flattened over b*l key/value
// positions. Scores scale by sqrt of the per-head dimension.
TensorPtr cross_attend(const TensorPtr& t, const TensorPtr& features,
                       const CrossAttentionBlock& block, bool train, RngStream& rng);

// One interaction stage: a single cross-attention layer plus a two-layer FFN,
// each with a residual connection.
struct InteractionStage {
    CrossAttentionBlock attn;
    TensorPtr ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    static InteractionStage init(int dim, const InteractionConfig& config, RngStream& rng);
    ParamList parameters(const std::string& prefix) const;
};

TensorPtr stage_forward(const TensorPtr& t, const TensorPtr& features,
                        const InteractionStage& stage, bool train, RngStream& rng);

// Learnable stage weights, one pair per prompt branch; unconstrained reals.
struct FusionWeights {
    TensorPtr lambda1;  // [1]
    TensorPtr lambda2;  // [1]
};

// t + lambda1*t1 + lambda2*t2.
TensorPtr fuse(const TensorPtr& t, const TensorPtr& t1, const TensorPtr& t2,
               const FusionWeights& weights);

}  // namespace czsl
