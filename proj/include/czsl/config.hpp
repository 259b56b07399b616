#pragma once

#include <optional>
#include <string>

#include "czsl/data.hpp"
#include "czsl/evaluation.hpp"
#include "czsl/model.hpp"
#include "czsl/training.hpp"

namespace czsl {

struct TaskConfig {
    enum class Type { Synthetic, Manifest };
    Type type = Type::Synthetic;
    SyntheticTaskSpec synthetic;
    bool seed_overridden = false;  // task.seed given explicitly
    std::string manifest_dir;      // for Type::Manifest
};

// Full run configuration. Unknown keys anywhere in the file are rejected so
// ablation typos cannot pass silently.
struct RunConfig {
    TaskConfig task;
    ModelConfig model;
    TrainConfig train;
    World eval_world = World::Closed;
    double eval_beta = 0.3;
    std::optional<double> feasibility_threshold;  // empty = "auto" (validation AUC)

    // The task inherits the run seed unless it sets its own.
    SyntheticTaskSpec effective_task() const;
    Dataset build_dataset() const;

    std::string canonical_json() const;  // defaults expanded, keys sorted
    uint64_t hash() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace czsl
