#pragma once

#include <optional>
#include <string>
#include <vector>

#include "czsl/composition.hpp"
#include "czsl/data.hpp"
#include "czsl/tensor.hpp"

namespace czsl {

class Model;

// Plain row-major matrix for protocol math (no differentiation involved).
struct ScoreMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    ScoreMatrix() = default;
    ScoreMatrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + static_cast<size_t>(c)]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + static_cast<size_t>(c)]; }
};

// Lowest-index argmax; the fixed tie-break keeps runs reproducible.
int argmax_row(const ScoreMatrix& m, int row);

struct EvalPoint {
    double bias = 0.0;
    double seen_acc = 0.0;
    double unseen_acc = 0.0;
};

// Calibration-bias sweep summary: best seen / best unseen accuracy at the
// sweep extremes, best harmonic mean along it, and the area under the
// seen-vs-unseen accuracy curve (trapezoidal, reported in [0,1]).
struct EvalCurve {
    std::vector<EvalPoint> points;  // bias ascending
    double best_seen = 0.0;
    double best_unseen = 0.0;
    double best_hm = 0.0;
    double auc = 0.0;
};

// Sweeps the additive bias on unseen-pair columns over all critical values
// (per-item gaps between best seen and best unseen score), evaluating exactly
// at each critical bias, between consecutive ones, and beyond both extremes.
EvalCurve bias_sweep(const ScoreMatrix& scores, const std::vector<int>& true_cols,
                     const std::vector<bool>& seen_column);

// Per-pair mixed inference score: beta * p(pair) + (1-beta) * p(state)*p(object).
ScoreMatrix combined_score(const ScoreMatrix& p_com, const ScoreMatrix& p_state,
                           const ScoreMatrix& p_obj, double beta, const CandidateIndex& cands);

// Similarity-based plausibility of non-seen pairs: the state-side and
// object-side best cosine against seen partners, averaged. Seen pairs score
// +infinity so thresholding always retains them.
std::vector<double> feasibility_scores(const CompositionSpace& space,
                                       const Tensor& state_tokens, const Tensor& object_tokens,
                                       const std::vector<Pair>& candidates);

// Open-world candidate pruning: all seen pairs plus the non-seen pairs whose
// feasibility score reaches the threshold.
std::vector<Pair> feasibility_filter(const CompositionSpace& space, const Tensor& state_tokens,
                                     const Tensor& object_tokens, double threshold);

struct EvalOptions {
    World world = World::Closed;
    double beta = 0.3;
    std::optional<double> feasibility_threshold;  // open world only
    int batch_size = 64;
};

struct EvalResult {
    EvalCurve curve;
    double com_acc = 0.0;    // branch accuracies at bias 0
    double state_acc = 0.0;
    double obj_acc = 0.0;
    double raw_seen_acc = 0.0;    // pair accuracy at bias 0, seen-labeled items
    double raw_unseen_acc = 0.0;  // pair accuracy at bias 0, unseen-labeled items
    int n_items = 0;
    int n_seen_items = 0;
    int n_unseen_items = 0;
    int n_candidates = 0;
};

// Deterministic metrics for fixed weights and split; model runs in
// evaluation mode. Also returns the raw per-item combined scores used by the
// sweep so callers can persist or re-derive the curve.
EvalResult evaluate(const Model& model, const Dataset& data, Split split,
                    const EvalOptions& options, ScoreMatrix* scores_out = nullptr);

// Chooses the feasibility threshold maximizing validation AUC, mirroring
// threshold selection on the validation split.
double calibrate_feasibility_threshold(const Model& model, const Dataset& data,
                                       const EvalOptions& open_options);

std::string curve_csv(const EvalCurve& curve);
std::string summary_csv_row(const std::string& dataset, World world, uint64_t seed,
                            const EvalCurve& curve);
constexpr const char* kSummaryHeader = "dataset,world,seed,S,U,HM,AUC";
const char* world_name(World w);

}  // namespace czsl
