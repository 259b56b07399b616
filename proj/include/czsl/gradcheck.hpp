#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "czsl/tensor.hpp"

namespace czsl {

struct GradCheckEntry {
    std::string leaf;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> failures;
    int64_t coords_checked = 0;
    double tolerance = 0.0;
    bool pass() const { return failures.empty(); }
};

// Compares reverse-mode gradients of a deterministic scalar function against
// central finite differences, coordinate by coordinate. Leaves with more than
// `max_coords_per_leaf` entries are checked on a seeded random subsample.
// Relative error uses |a-n| / max(denom_floor, |a|, |n|) so coordinates with
// near-zero gradients are judged on an absolute scale.
GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& leaves,
                           double step = 1e-5, double tolerance = 1e-4,
                           uint64_t sample_seed = 0, int max_coords_per_leaf = 200,
                           double denom_floor = 1e-2);

}  // namespace czsl
