#include "czsl/gradcheck.hpp"

#include <cmath>

#include "czsl/errors.hpp"

namespace czsl {

namespace {

double eval_scalar(const std::function<TensorPtr()>& f) {
    NoGradGuard guard;
    auto out = f();
    if (out->size() != 1)
        throw DimensionError("grad_check target must be scalar, got " + shape_str(out->shape));
    double v = out->data[0];
    if (!std::isfinite(v))
        throw EvaluationError("grad_check: non-finite function value at perturbed point");
    return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& leaves,
                           double step, double tolerance, uint64_t sample_seed,
                           int max_coords_per_leaf, double denom_floor) {
    if (step <= 0.0) throw ParameterError("grad_check step must be positive");

    for (auto& [name, leaf] : leaves) {
        (void)name;
        leaf->zero_grad();
    }
    auto root = f();
    if (root->size() != 1)
        throw DimensionError("grad_check target must be scalar, got " + shape_str(root->shape));
    if (!std::isfinite(root->data[0]))
        throw EvaluationError("grad_check: non-finite function value");
    backward(root);

    GradCheckReport report;
    report.tolerance = tolerance;
    RngStream sampler(sample_seed ^ 0xA5A5A5A5DEADBEEFull);

    for (auto& [name, leaf] : leaves) {
        int64_t n = leaf->size();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_leaf) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            coords.reserve(static_cast<size_t>(max_coords_per_leaf));
            for (int i = 0; i < max_coords_per_leaf; ++i)
                coords.push_back(static_cast<int64_t>(sampler.next_u64() % static_cast<uint64_t>(n)));
        }
        leaf->ensure_grad();
        for (int64_t c : coords) {
            double saved = leaf->data[static_cast<size_t>(c)];
            leaf->data[static_cast<size_t>(c)] = saved + step;
            double f_plus = eval_scalar(f);
            leaf->data[static_cast<size_t>(c)] = saved - step;
            double f_minus = eval_scalar(f);
            leaf->data[static_cast<size_t>(c)] = saved;

            double numeric = (f_plus - f_minus) / (2.0 * step);
            double analytic = leaf->grad[static_cast<size_t>(c)];
            double denom = std::max({denom_floor, std::fabs(analytic), std::fabs(numeric)});
            double rel = std::fabs(analytic - numeric) / denom;

            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {name, c, analytic, numeric, rel};
            }
            if (rel > tolerance) report.failures.push_back({name, c, analytic, numeric, rel});
        }
    }
    return report;
}

}  // namespace czsl
