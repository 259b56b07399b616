#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "czsl/workbench.hpp"

using namespace czsl;

namespace {

int protected_main(int argc, char** argv) {
    CLI::App app{"Compositional zero-shot learning workbench"};
    app.require_subcommand(1);

    std::string config_path, out_dir, run_dir, run_root = default_run_root();
    std::string variant = "full";
    std::vector<std::string> variants{"full", "agg_a", "agg_b", "ms_a", "ms_b", "df"};
    std::vector<int> n_values{1, 2, 3, 4};
    std::vector<std::string> summary_files;
    int seeds = 1;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    gen->add_option("--config", config_path, "Run config JSON")->required();
    gen->add_option("--out", out_dir, "Output dataset directory")->required();

    auto* train = app.add_subcommand("train", "Train and evaluate one run");
    train->add_option("--config", config_path, "Run config JSON")->required();
    train->add_option("--variant", variant, "Ablation variant (full|agg_a|agg_b|ms_a|ms_b|df)");
    train->add_option("--run-root", run_root, "Run directory root");

    auto* eval = app.add_subcommand("eval", "Re-evaluate a saved run's checkpoint");
    eval->add_option("--run-dir", run_dir, "Run directory to re-evaluate")->required();

    auto* ablate = app.add_subcommand("ablate", "Train every ablation variant over a seed set");
    ablate->add_option("--config", config_path, "Run config JSON")->required();
    ablate->add_option("--variants", variants, "Variants to run");
    ablate->add_option("--seeds", seeds, "Number of seeds (base = train.seed)");
    ablate->add_option("--run-root", run_root, "Run directory root");

    auto* sweep = app.add_subcommand("sweep-layers", "AUC vs aggregation window size (M = N)");
    sweep->add_option("--config", config_path, "Run config JSON")->required();
    sweep->add_option("--n-values", n_values, "Window sizes to sweep");
    sweep->add_option("--seeds", seeds, "Number of seeds per value");
    sweep->add_option("--run-root", run_root, "Run directory root");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");

    auto* report = app.add_subcommand("report", "Merge summary CSVs into mean/stddev tables");
    report->add_option("files", summary_files, "summary CSV files")->required();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        RunConfig config = load_run_config(config_path);
        if (config.task.type != TaskConfig::Type::Synthetic)
            throw UsageError("gen-data needs a synthetic task config");
        Dataset data = gen_synthetic(config.effective_task());
        save_split_dir(data, out_dir);
        auto m = data.manifest();
        std::cout << "wrote " << out_dir << ": train " << m.train.seen_pairs << " pairs / "
                  << m.train.samples << " samples; val " << m.val.seen_pairs << "+"
                  << m.val.unseen_pairs << " pairs / " << m.val.samples << "; test "
                  << m.test.seen_pairs << "+" << m.test.unseen_pairs << " pairs / "
                  << m.test.samples << "\n";
        return 0;
    }
    if (train->parsed()) {
        RunConfig config = load_run_config(config_path);
        auto result = run_train(config, variant_from_string(variant), run_root);
        std::cout << "run dir: " << result.paths.dir << "\n"
                  << "best epoch " << result.fit.best_epoch << ", val AUC "
                  << result.fit.best_val_auc << "\n"
                  << kSummaryHeader << "\n"
                  << summary_csv_row("test", config.eval_world, config.train.seed,
                                     result.test.curve)
                  << "\n"
                  << "elapsed " << result.seconds << "s\n";
        return 0;
    }
    if (eval->parsed()) {
        auto result = run_eval(run_dir);
        std::cout << kSummaryHeader << "\n" << result.summary_row << "\n";
        if (!result.matches_stored) {
            std::cerr << "checkpoint re-evaluation does not match the stored summary\n";
            return 1;
        }
        std::cout << "matches stored summary\n";
        return 0;
    }
    if (ablate->parsed()) {
        RunConfig config = load_run_config(config_path);
        auto result = run_ablation(config, variants, seeds, run_root, &std::cerr);
        std::cout << result.csv;
        return 0;
    }
    if (sweep->parsed()) {
        RunConfig config = load_run_config(config_path);
        auto result = run_layer_sweep(config, n_values, seeds, run_root, &std::cerr);
        std::cout << result.csv;
        return 0;
    }
    if (gradcheck->parsed()) {
        bool ok = gradcheck_battery(std::cout);
        return ok ? 0 : 1;
    }
    if (report->parsed()) {
        std::cout << merge_summaries(summary_files);
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return protected_main(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
