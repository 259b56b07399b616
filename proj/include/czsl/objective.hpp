#pragma once

#include <vector>

#include "czsl/tensor.hpp"

namespace czsl {

struct LossWeights {
    double alpha_s = 1.0;
    double alpha_o = 1.0;
    double alpha_c = 1.0;

    void validate() const {
        if (alpha_s < 0.0 || alpha_o < 0.0 || alpha_c < 0.0)
            throw ParameterError("loss weights must be nonnegative");
        if (alpha_s == 0.0 && alpha_o == 0.0 && alpha_c == 0.0)
            throw ParameterError("at least one loss weight must be positive");
    }
};

// Row-stochastic class probabilities from visual/prompt embeddings:
// softmax over candidates of unit-normalized dot products scaled by 1/tau.
TensorPtr branch_probs(const TensorPtr& v, const TensorPtr& t, double tau);

// Mean negative log probability of the true class (probability floor 1e-12,
// floored entries reported through stats).
TensorPtr branch_loss(const TensorPtr& probs, const std::vector<int>& labels,
                      CrossEntropyStats* stats = nullptr);

// alpha_s*Ls + alpha_o*Lo + alpha_c*Lc.
TensorPtr total_loss(const TensorPtr& loss_s, const TensorPtr& loss_o, const TensorPtr& loss_c,
                     const LossWeights& weights);

}  // namespace czsl
