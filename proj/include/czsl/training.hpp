#pragma once

#include <vector>

#include "czsl/data.hpp"
#include "czsl/evaluation.hpp"
#include "czsl/model.hpp"

namespace czsl {

struct TrainConfig {
    int epochs = 30;
    int batch = 64;
    uint64_t seed = 1;
    double lr = 5e-4;
    double lr_decay = 0.5;
    int lr_decay_every = 5;
    double weight_decay = 1e-5;

    void validate() const;
    // Multiplicative decay every lr_decay_every epochs; monotone non-increasing.
    double lr_at_epoch(int epoch) const;
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; applied to rank >= 2 tensors only
};

class AdamOptimizer {
public:
    AdamOptimizer(ParamList trainable, AdamOptions options = {});

    // One adaptive-moment update from the accumulated gradients, then clears
    // them. Missing gradients count as zero.
    void step(double lr);
    void zero_grad();
    int64_t step_count() const { return t_; }
    const ParamList& params() const { return params_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    ParamList params_;
    std::vector<Moments> moments_;
    AdamOptions options_;
    int64_t t_ = 0;
};

struct StepResult {
    double loss = 0.0;
    double loss_s = 0.0, loss_o = 0.0, loss_c = 0.0;
    double grad_norm = 0.0;
    int64_t floored = 0;
};

// One forward/backward/update on a batch. Aborts with an EvaluationError
// carrying the branch losses if the total loss is non-finite.
StepResult train_step(Model& model, const TensorPtr& batch,
                      const std::vector<int>& state_labels,
                      const std::vector<int>& object_labels,
                      const std::vector<int>& pair_labels,
                      const CandidateIndex& train_candidates, AdamOptimizer& optimizer,
                      double lr);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    EvalCurve val;
};

struct FitResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val_auc = 0.0;
};

// Full training loop. Validation runs closed-world with the given beta after
// every epoch; the model is left holding the weights of the best-AUC epoch
// (earliest wins ties).
FitResult fit(Model& model, const Dataset& data, const TrainConfig& config,
              double eval_beta);

}  // namespace czsl
