#include "czsl/objective.hpp"

namespace czsl {

TensorPtr branch_probs(const TensorPtr& v, const TensorPtr& t, double tau) {
    if (tau <= 0.0) throw ParameterError("temperature must be positive, got " + std::to_string(tau));
    if (v->rank() != 2 || t->rank() != 2 || v->dim(1) != t->dim(1))
        throw DimensionError("branch_probs expects [b,d] x [N,d], got " + shape_str(v->shape) +
                             " and " + shape_str(t->shape));
    auto logits = scale(matmul(unit_rows(v), permute(unit_rows(t), {1, 0})), 1.0 / tau);
    return softmax(logits, 1);
}

TensorPtr branch_loss(const TensorPtr& probs, const std::vector<int>& labels,
                      CrossEntropyStats* stats) {
    return cross_entropy_from_probs(probs, labels, 1e-12, stats);
}

TensorPtr total_loss(const TensorPtr& loss_s, const TensorPtr& loss_o, const TensorPtr& loss_c,
                     const LossWeights& weights) {
    weights.validate();
    return add(add(scale(loss_s, weights.alpha_s), scale(loss_o, weights.alpha_o)),
               scale(loss_c, weights.alpha_c));
}

}  // namespace czsl
