#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "czsl/config.hpp"
#include "czsl/gradcheck.hpp"
#include "czsl/training.hpp"

namespace czsl {

// Run directories live under $CZSL_RUN_ROOT (default ./runs), named by the
// config hash, the ablation variant and the seed.
std::string default_run_root();

struct RunPaths {
    std::string dir;
    std::string config_json;
    std::string checkpoint;
    std::string history_csv;
    std::string summary_val_csv;
    std::string summary_test_csv;
    std::string curve_val_csv;
    std::string curve_test_csv;
    std::string meta_json;
};
RunPaths run_paths(const RunConfig& config, Variant variant, const std::string& root);

std::string history_csv(const FitResult& fit);

struct TrainRunResult {
    RunPaths paths;
    FitResult fit;
    EvalResult val;
    EvalResult test;
    std::optional<double> feasibility_threshold;  // chosen when open world + auto
    double seconds = 0.0;
};

// Trains per config, evaluates validation (closed world) and test (configured
// world), and persists config snapshot, history, summaries, curves and the
// checkpoint under the run directory.
TrainRunResult run_train(const RunConfig& config, Variant variant, const std::string& run_root);

struct EvalRunResult {
    EvalResult val;
    std::string summary_row;
    bool matches_stored = false;
};
// Rebuilds the model from the run directory's config snapshot and checkpoint,
// re-evaluates validation, and compares against the stored summary.
EvalRunResult run_eval(const std::string& run_dir);

struct AblationRow {
    std::string variant;
    uint64_t seed = 0;
    EvalResult test;
    double seconds = 0.0;
};
struct AblationReport {
    std::vector<AblationRow> rows;
    std::string csv;  // variant,seed,S,U,HM,AUC plus aggregate rows
    double mean_auc(const std::string& variant) const;
};
AblationReport run_ablation(const RunConfig& config, const std::vector<std::string>& variants,
                            int seeds, const std::string& run_root, std::ostream* log = nullptr);

struct SweepRow {
    int n = 0;
    uint64_t seed = 0;
    double auc = 0.0;
    double seconds = 0.0;
};
struct SweepReport {
    std::vector<SweepRow> rows;
    std::string csv;  // per-(n,seed) rows plus per-n means and reference notes
    double mean_auc(int n) const;
};
// Trains/evaluates once per requested window size with M = N.
SweepReport run_layer_sweep(const RunConfig& config, const std::vector<int>& n_values, int seeds,
                            const std::string& run_root, std::ostream* log = nullptr);

// Reverse-mode gradients of the full training loss on a 2-state x 2-object
// micro-instance, checked against central finite differences.
GradCheckReport micro_gradcheck(double step = 1e-5, double tolerance = 1e-4);

// Operation-level and full-loss gradient checks; prints one line per check.
// Returns true when everything passes.
bool gradcheck_battery(std::ostream& out);

// Merges summary CSV files into a mean +- stddev table grouped by
// (dataset, world).
std::string merge_summaries(const std::vector<std::string>& files);

}  // namespace czsl
