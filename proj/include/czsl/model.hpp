#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "czsl/aggregation.hpp"
#include "czsl/composition.hpp"
#include "czsl/encoders.hpp"
#include "czsl/interaction.hpp"
#include "czsl/objective.hpp"
#include "czsl/params.hpp"

namespace czsl {

// Ablation variants. CLI spelling in parentheses:
//   Full (full), AggFirstLast (agg_a): raw first/last layers instead of the
//   aggregators; AggMean (agg_b): plain layer means; NoStage1 (ms_a); NoStage2
//   (ms_b); NoDirectTerm (df): both stages run but fusion drops the first
//   stage's direct term.
enum class Variant { Full, AggFirstLast, AggMean, NoStage1, NoStage2, NoDirectTerm };

Variant variant_from_string(const std::string& name);
const char* variant_to_string(Variant v);

struct ModelConfig {
    EncoderConfig encoder;
    int n_low = 3;
    int m_high = 3;
    double agg_dropout = 0.1;
    InteractionConfig interaction;
    LossWeights loss_weights;
    double temperature = 0.01;
    Variant variant = Variant::Full;

    void validate() const;
};

// The full pipeline: frozen stand-in encoder -> windowed layer aggregation ->
// per-branch two-stage cross-attention over the batch's visual positions ->
// learnable fusion -> temperature-scaled branch probabilities.
class Model {
public:
    Model(const ModelConfig& config, const CompositionSpace& space, uint64_t seed);

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

    struct BranchOutput {
        TensorPtr p_com;    // [b, N_candidates]
        TensorPtr p_state;  // [b, |S|]
        TensorPtr p_obj;    // [b, |O|]
    };
    BranchOutput forward(const TensorPtr& batch, const CandidateIndex& candidates) const;

    // Final per-branch prompt embeddings after staged interaction and fusion.
    struct FusedPrompts {
        TensorPtr t_com, t_state, t_obj;
    };
    FusedPrompts fused_prompts(const TensorPtr& batch, const CandidateIndex& candidates) const;

    struct LossOutput {
        TensorPtr total, loss_s, loss_o, loss_c;
        CrossEntropyStats ce_stats;
    };
    LossOutput loss(const TensorPtr& batch, const std::vector<int>& state_labels,
                    const std::vector<int>& object_labels, const std::vector<int>& pair_labels,
                    const CandidateIndex& train_candidates) const;

    // Aggregated (or raw/mean, per variant) features; exposed for tests.
    struct Features {
        FeatureStack stack;
        TensorPtr low, high;
        TensorPtr cls;
    };
    Features visual_features(const TensorPtr& batch) const;

    ParamList parameters() const;
    ParamList trainable_parameters() const;
    const ModelConfig& config() const { return config_; }
    const CompositionSpace& space() const { return space_; }
    const PromptBuilder& prompts() const { return *prompts_; }
    const VisualEncoder& encoder() const { return *encoder_; }
    uint64_t seed() const { return seed_; }

private:
    struct Branch {
        std::optional<InteractionStage> stage1, stage2;
        std::optional<FusionWeights> fusion;  // lambda1/lambda2 present as used
    };
    TensorPtr branch_prompt(const Branch& branch, const TensorPtr& t, const TensorPtr& f_low,
                            const TensorPtr& f_high) const;
    Branch make_branch(const std::string& name, int dim, uint64_t seed) const;

    ModelConfig config_;
    CompositionSpace space_;
    uint64_t seed_;
    bool training_ = false;
    mutable RngStream dropout_rng_;  // advanced by training-mode forwards

    std::unique_ptr<VisualEncoder> encoder_;
    std::unique_ptr<PromptBuilder> prompts_;
    std::unique_ptr<VisualHeads> heads_;
    std::unique_ptr<Aggregator> agg_low_, agg_high_;  // absent for agg ablations
    Branch com_, state_, obj_;
};

// Binary dump of every named parameter (shape + raw doubles); round-trips
// bit-exactly.
void save_checkpoint(const ParamList& params, const std::string& path);
void load_checkpoint(const ParamList& params, const std::string& path);

}  // namespace czsl
