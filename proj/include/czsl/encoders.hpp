#pragma once

#include <optional>
#include <string>
#include <vector>

#include "czsl/composition.hpp"
#include "czsl/params.hpp"
#include "czsl/tensor.hpp"

namespace czsl {

// Ordered per-layer outputs F_1..F_S of the visual encoder, each [b, l, d].
struct FeatureStack {
    std::vector<TensorPtr> layers;
    int cls_index = 0;
    int batch = 0;
    int tokens = 0;
    int dim = 0;

    int depth() const { return static_cast<int>(layers.size()); }
    // [CLS] embedding of the final layer, shape [b, d].
    TensorPtr final_cls() const;
};

// Low-rank additive adaptation of a frozen [in,out] weight, stored in row
// convention: effective weight = W0 + scaling * A·B with A [in,r], B [r,out].
// B starts at zero so the adapted layer initially equals the frozen one.
struct LoraAdapter {
    TensorPtr a;
    TensorPtr b;
    int rank = 0;
    double scaling = 1.0;
};

LoraAdapter make_lora(int in_dim, int out_dim, int rank, double scaling, RngStream& rng);

// x·(W0 + s·A·B) + bias, computed as the frozen path plus the low-rank delta
// so a zero B leaves the output bit-identical to the frozen layer. `adapter`
// may be null; `bias` may be null.
TensorPtr lora_linear(const TensorPtr& x, const TensorPtr& w0, const TensorPtr& bias,
                      const LoraAdapter* adapter);

struct EncoderConfig {
    int blocks = 8;
    int dim = 64;
    int patches = 5;  // token count is patches + 1 ([CLS] at index 0)
    int heads = 4;
    int ffn_expansion = 2;
    int input_dim = 64;
    bool lora_enabled = true;
    int lora_rank = 4;
    double lora_scale = 1.0;

    void validate() const;
};

// Frozen stand-in for a pretrained vision transformer: random orthogonal
// weights, pre-layernorm blocks, per-position patch maps over contiguous
// coordinate windows of the input (keeping state evidence local to a few
// tokens). Only the LoRA adapters on the attention projections train.
class VisualEncoder {
public:
    VisualEncoder(const EncoderConfig& config, uint64_t seed);

    // batch: [b, input_dim] synthetic image features.
    FeatureStack encode(const TensorPtr& batch) const;

    ParamList parameters(const std::string& prefix) const;
    const EncoderConfig& config() const { return config_; }
    // Zeroes every LoRA B so the encoder equals its frozen form exactly.
    void reset_lora_deltas();

private:
    struct Block {
        TensorPtr ln1_gain, ln1_offset, ln2_gain, ln2_offset;
        TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
        TensorPtr ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        std::optional<LoraAdapter> lq, lk, lv, lo;
    };

    TensorPtr embed(const TensorPtr& batch) const;       // [b, l, d]
    TensorPtr self_attention(const TensorPtr& x, const Block& blk) const;

    EncoderConfig config_;
    std::vector<TensorPtr> patch_maps_;  // per position, [window, d]
    std::vector<int> window_starts_;
    std::vector<int> window_lengths_;
    TensorPtr cls_token_;  // [d]
    std::vector<Block> blocks_;
};

// Candidate prompt embeddings for the three branches. Rows align with the
// candidate pair list / state vocabulary / object vocabulary respectively.
struct PromptBank {
    TensorPtr t_com;    // [N_com, d]
    TensorPtr t_state;  // [N_state, d]
    TensorPtr t_obj;    // [N_obj, d]
};

// Trainable state/object token tables behind frozen prompt templates. The
// text pathway is a frozen pooling encoder: token embeddings are averaged
// over the template and passed through one frozen mixing layer.
class PromptBuilder {
public:
    PromptBuilder(int num_states, int num_objects, int dim, uint64_t seed);

    PromptBank build(const CompositionSpace& space, const std::vector<Pair>& candidates) const;

    TensorPtr state_tokens() const { return state_tokens_; }
    TensorPtr object_tokens() const { return object_tokens_; }
    ParamList parameters(const std::string& prefix) const;
    int dim() const { return dim_; }

private:
    int dim_;
    TensorPtr state_tokens_;   // [|S|, d] trainable
    TensorPtr object_tokens_;  // [|O|, d] trainable
    TensorPtr ctx_prefix_;     // frozen sum of "a photo of" embeddings, [d]
    TensorPtr generic_object_; // frozen word filling the state-branch template, [d]
    TensorPtr mix_w_;          // frozen [d, d]
    TensorPtr mix_b_;          // frozen [d]
};

// Three independent two-layer MLPs mapping the [CLS] embedding to the
// combination / state / object visual representations.
class VisualHeads {
public:
    VisualHeads(int dim, uint64_t seed);

    struct Outputs {
        TensorPtr v_com, v_state, v_obj;  // each [b, d]
    };
    Outputs forward(const TensorPtr& cls) const;
    ParamList parameters(const std::string& prefix) const;

private:
    struct Mlp {
        TensorPtr w1, b1, w2, b2;
    };
    TensorPtr run(const Mlp& m, const TensorPtr& x) const;
    Mlp com_, state_, obj_;
};

}  // namespace czsl
