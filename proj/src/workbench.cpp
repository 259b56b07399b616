#include "czsl/workbench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace czsl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IntegrityError("cannot write " + path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

std::string default_run_root() {
    if (const char* env = std::getenv("CZSL_RUN_ROOT")) return env;
    return "runs";
}

RunPaths run_paths(const RunConfig& config, Variant variant, const std::string& root) {
    RunPaths p;
    p.dir = root + "/" + hash_hex(config.hash()) + "-" + variant_to_string(variant) + "-s" +
            std::to_string(config.train.seed);
    p.config_json = p.dir + "/config.json";
    p.checkpoint = p.dir + "/checkpoint.bin";
    p.history_csv = p.dir + "/history.csv";
    p.summary_val_csv = p.dir + "/summary_val.csv";
    p.summary_test_csv = p.dir + "/summary_test.csv";
    p.curve_val_csv = p.dir + "/curve_val.csv";
    p.curve_test_csv = p.dir + "/curve_test.csv";
    p.meta_json = p.dir + "/meta.json";
    return p;
}

std::string history_csv(const FitResult& fit) {
    std::string out = "epoch,lr,train_loss,val_S,val_U,val_HM,val_AUC\n";
    for (const auto& r : fit.history)
        out += std::to_string(r.epoch) + "," + fmt17(r.lr) + "," + fmt17(r.train_loss) + "," +
               fmt17(r.val.best_seen) + "," + fmt17(r.val.best_unseen) + "," +
               fmt17(r.val.best_hm) + "," + fmt17(r.val.auc) + "\n";
    return out;
}

TrainRunResult run_train(const RunConfig& config, Variant variant, const std::string& run_root) {
    auto t0 = std::chrono::steady_clock::now();
    TrainRunResult result;
    result.paths = run_paths(config, variant, run_root);
    fs::create_directories(result.paths.dir);

    Dataset data = config.build_dataset();
    ModelConfig mc = config.model;
    mc.variant = variant;
    Model model(mc, data.space, config.train.seed);

    result.fit = fit(model, data, config.train, config.eval_beta);

    EvalOptions val_options{World::Closed, config.eval_beta, std::nullopt, config.train.batch};
    result.val = evaluate(model, data, Split::Val, val_options);

    EvalOptions test_options = val_options;
    test_options.world = config.eval_world;
    if (config.eval_world == World::Open) {
        result.feasibility_threshold = config.feasibility_threshold
                                           ? *config.feasibility_threshold
                                           : calibrate_feasibility_threshold(model, data,
                                                                             test_options);
        test_options.feasibility_threshold = result.feasibility_threshold;
    }
    result.test = evaluate(model, data, Split::Test, test_options);

    write_file(result.paths.config_json, config.canonical_json() + "\n");
    write_file(result.paths.history_csv, history_csv(result.fit));
    write_file(result.paths.summary_val_csv,
               std::string(kSummaryHeader) + "\n" +
                   summary_csv_row(data.name, World::Closed, config.train.seed,
                                   result.val.curve) +
                   "\n");
    write_file(result.paths.summary_test_csv,
               std::string(kSummaryHeader) + "\n" +
                   summary_csv_row(data.name, config.eval_world, config.train.seed,
                                   result.test.curve) +
                   "\n");
    write_file(result.paths.curve_val_csv, curve_csv(result.val.curve));
    write_file(result.paths.curve_test_csv, curve_csv(result.test.curve));
    save_checkpoint(model.parameters(), result.paths.checkpoint);

    json meta;
    meta["variant"] = variant_to_string(variant);
    meta["seed"] = config.train.seed;
    meta["best_epoch"] = result.fit.best_epoch;
    meta["best_val_auc"] = result.fit.best_val_auc;
    if (result.feasibility_threshold) meta["feasibility_threshold"] = *result.feasibility_threshold;
    write_file(result.paths.meta_json, meta.dump(2) + "\n");

    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

EvalRunResult run_eval(const std::string& run_dir) {
    RunConfig config = parse_run_config(read_file(run_dir + "/config.json"));
    json meta = json::parse(read_file(run_dir + "/meta.json"));
    Variant variant = variant_from_string(meta["variant"].get<std::string>());

    Dataset data = config.build_dataset();
    ModelConfig mc = config.model;
    mc.variant = variant;
    Model model(mc, data.space, config.train.seed);
    load_checkpoint(model.parameters(), run_dir + "/checkpoint.bin");
    model.set_training(false);

    EvalOptions val_options{World::Closed, config.eval_beta, std::nullopt, config.train.batch};
    EvalRunResult out;
    out.val = evaluate(model, data, Split::Val, val_options);
    out.summary_row =
        summary_csv_row(data.name, World::Closed, config.train.seed, out.val.curve);
    std::string stored = read_file(run_dir + "/summary_val.csv");
    out.matches_stored =
        stored == std::string(kSummaryHeader) + "\n" + out.summary_row + "\n";
    return out;
}

double AblationReport::mean_auc(const std::string& variant) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.variant == variant) {
            sum += r.test.curve.auc;
            ++n;
        }
    return n ? sum / n : 0.0;
}

AblationReport run_ablation(const RunConfig& config, const std::vector<std::string>& variants,
                            int seeds, const std::string& run_root, std::ostream* log) {
    if (seeds <= 0) throw UsageError("ablation needs at least one seed");
    AblationReport report;
    report.csv = "variant,seed,S,U,HM,AUC\n";
    for (const std::string& vname : variants) {
        Variant variant = variant_from_string(vname);
        for (int i = 0; i < seeds; ++i) {
            RunConfig cfg = config;
            cfg.train.seed = config.train.seed + static_cast<uint64_t>(i);
            auto run = run_train(cfg, variant, run_root);
            AblationRow row{vname, cfg.train.seed, run.test, run.seconds};
            report.rows.push_back(row);
            report.csv += vname + "," + std::to_string(cfg.train.seed) + "," +
                          fmt17(row.test.curve.best_seen) + "," +
                          fmt17(row.test.curve.best_unseen) + "," +
                          fmt17(row.test.curve.best_hm) + "," + fmt17(row.test.curve.auc) + "\n";
            if (log)
                *log << "ablation " << vname << " seed " << cfg.train.seed
                     << ": AUC=" << row.test.curve.auc << " (" << run.seconds << "s)\n";
        }
    }
    report.csv += "# aggregate: variant,n,S_mean,U_mean,HM_mean,AUC_mean,AUC_std\n";
    for (const std::string& vname : variants) {
        double s = 0, u = 0, hm = 0, auc = 0, auc_sq = 0;
        int n = 0;
        for (const auto& r : report.rows)
            if (r.variant == vname) {
                s += r.test.curve.best_seen;
                u += r.test.curve.best_unseen;
                hm += r.test.curve.best_hm;
                auc += r.test.curve.auc;
                auc_sq += r.test.curve.auc * r.test.curve.auc;
                ++n;
            }
        double mean_auc = auc / n;
        double var = n > 1 ? (auc_sq - n * mean_auc * mean_auc) / (n - 1) : 0.0;
        report.csv += "# " + vname + "," + std::to_string(n) + "," + fmt17(s / n) + "," +
                      fmt17(u / n) + "," + fmt17(hm / n) + "," + fmt17(mean_auc) + "," +
                      fmt17(std::sqrt(std::max(0.0, var))) + "\n";
    }
    return report;
}

double SweepReport::mean_auc(int n) const {
    double sum = 0.0;
    int count = 0;
    for (const auto& r : rows)
        if (r.n == n) {
            sum += r.auc;
            ++count;
        }
    return count ? sum / count : 0.0;
}

SweepReport run_layer_sweep(const RunConfig& config, const std::vector<int>& n_values, int seeds,
                            const std::string& run_root, std::ostream* log) {
    for (int n : n_values)
        if (2 * n > config.model.encoder.blocks)
            throw ConfigError("sweep value n=" + std::to_string(n) +
                              " needs 2n <= encoder blocks (" +
                              std::to_string(config.model.encoder.blocks) + ")");
    SweepReport report;
    report.csv = "n,seed,AUC\n";
    for (int n : n_values) {
        for (int i = 0; i < seeds; ++i) {
            RunConfig cfg = config;
            cfg.model.n_low = n;
            cfg.model.m_high = n;
            cfg.train.seed = config.train.seed + static_cast<uint64_t>(i);
            auto run = run_train(cfg, Variant::Full, run_root);
            report.rows.push_back({n, cfg.train.seed, run.test.curve.auc, run.seconds});
            report.csv += std::to_string(n) + "," + std::to_string(cfg.train.seed) + "," +
                          fmt17(run.test.curve.auc) + "\n";
            if (log)
                *log << "sweep n=" << n << " seed " << cfg.train.seed
                     << ": AUC=" << run.test.curve.auc << " (" << run.seconds << "s)\n";
        }
    }
    report.csv += "# mean per n\n";
    for (int n : n_values)
        report.csv += "# " + std::to_string(n) + "," + fmt17(report.mean_auc(n)) + "\n";
    report.csv +=
        "# reference optima on the benchmark datasets: ut-zappos N=3, mit-states N=4, cgqa N=4\n";
    return report;
}

namespace {

// 2-state x 2-object micro-instance exercising every trainable component.
struct MicroFixture {
    RunConfig config;
    Dataset data;
    std::unique_ptr<Model> model;
    CandidateIndex candidates;
    TensorPtr batch;
    std::vector<int> state_labels, object_labels, pair_labels;

    MicroFixture() {
        auto& s = config.task.synthetic;
        s.states = 2;
        s.objects = 2;
        s.input_dim = 12;
        s.samples_per_pair = 2;
        s.val_per_pair = 1;
        s.test_per_pair = 1;
        s.unseen_ratio = 0.25;
        s.locality = 0.5;
        s.noise = 0.1;
        auto& e = config.model.encoder;
        e.blocks = 4;
        e.dim = 8;
        e.patches = 3;
        e.heads = 2;
        e.ffn_expansion = 2;
        e.input_dim = s.input_dim;
        e.lora_enabled = true;
        e.lora_rank = 1;
        config.model.n_low = 2;
        config.model.m_high = 2;
        config.model.interaction.heads = 2;
        config.train.seed = 7;

        data = gen_synthetic(config.effective_task());
        model = std::make_unique<Model>(config.model, data.space, config.train.seed);
        model->set_training(false);  // deterministic loss for differencing
        candidates = CandidateIndex::build(data.space.seen_pairs, data.space);

        const auto& train = data.train;
        int n = train.size(), dim = data.input_dim;
        batch = Tensor::create({n, dim});
        std::copy(train.features.begin(), train.features.end(), batch->data.begin());
        state_labels = train.state_label;
        object_labels = train.object_label;
        for (int i = 0; i < n; ++i) {
            Pair p{train.state_label[static_cast<size_t>(i)], train.object_label[static_cast<size_t>(i)]};
            pair_labels.push_back(candidates.column_of(p));
        }
    }

    TensorPtr loss() const {
        return model->loss(batch, state_labels, object_labels, pair_labels, candidates).total;
    }
};

}  // namespace

GradCheckReport micro_gradcheck(double step, double tolerance) {
    MicroFixture fx;
    std::vector<std::pair<std::string, TensorPtr>> leaves;
    for (const auto& p : fx.model->trainable_parameters()) leaves.push_back({p.name, p.value});
    return grad_check([&] { return fx.loss(); }, leaves, step, tolerance, fx.config.train.seed);
}

bool gradcheck_battery(std::ostream& out) {
    bool all_pass = true;
    auto run = [&](const char* name, const GradCheckReport& report) {
        all_pass = all_pass && report.pass();
        out << (report.pass() ? "pass" : "FAIL") << "  " << name
            << "  max_rel_err=" << report.max_rel_err << "  coords=" << report.coords_checked
            << "\n";
    };

    RngStream rng(2024);
    {
        auto a = random_uniform({3, 4}, rng, -1, 1, true);
        auto b = random_uniform({4, 5}, rng, -1, 1, true);
        run("matmul", grad_check([&] { return sum_all(matmul(a, b)); }, {{"a", a}, {"b", b}},
                                 1e-5, 1e-6));
    }
    {
        auto x = random_uniform({4, 6}, rng, -1, 1, true);
        auto w = random_uniform({6, 6}, rng, -1, 1, false);
        run("softmax", grad_check(
                           [&] {
                               auto probs = softmax(matmul(x, w), 1);
                               return cross_entropy_from_probs(probs, {0, 1, 2, 3});
                           },
                           {{"x", x}}, 1e-5, 1e-5));
    }
    {
        auto x = random_uniform({5, 8}, rng, -1, 1, true);
        auto gain = random_uniform({8}, rng, 0.5, 1.5, true);
        auto offset = random_uniform({8}, rng, -0.5, 0.5, true);
        run("layer_norm", grad_check([&] { return sum_all(relu(layer_norm(x, gain, offset))); },
                                     {{"x", x}, {"gain", gain}, {"offset", offset}}, 1e-5, 1e-5));
    }
    {
        auto x = random_uniform({6, 4}, rng, -1, 1, true);
        run("unit_rows", grad_check(
                             [&] {
                                 auto y = unit_rows(x);
                                 return sum_all(softmax(scale(matmul(y, permute(y, {1, 0})), 3.0), 1));
                             },
                             {{"x", x}}, 1e-5, 1e-5));
    }
    {
        auto report = micro_gradcheck();
        run("full training loss (2x2 micro-instance)", report);
        if (!report.pass())
            out << "  worst: " << report.worst.leaf << "[" << report.worst.index
                << "] analytic=" << report.worst.analytic << " numeric=" << report.worst.numeric
                << "\n";
    }
    return all_pass;
}

std::string merge_summaries(const std::vector<std::string>& files) {
    struct Acc {
        int n = 0;
        double sum[4] = {0, 0, 0, 0};
        double sq[4] = {0, 0, 0, 0};
    };
    std::map<std::string, Acc> groups;
    for (const std::string& file : files) {
        std::ifstream in(file);
        if (!in) throw UsageError("cannot open summary file " + file);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                first = false;
                if (line.rfind("dataset,", 0) == 0) continue;
            }
            if (line.empty() || line[0] == '#') continue;
            std::stringstream ss(line);
            std::string dataset, world, seed, field;
            std::getline(ss, dataset, ',');
            std::getline(ss, world, ',');
            std::getline(ss, seed, ',');
            double vals[4];
            for (double& v : vals) {
                if (!std::getline(ss, field, ',')) throw IntegrityError("short summary row: " + line);
                v = std::strtod(field.c_str(), nullptr);
            }
            Acc& acc = groups[dataset + "," + world];
            ++acc.n;
            for (int i = 0; i < 4; ++i) {
                acc.sum[i] += vals[i];
                acc.sq[i] += vals[i] * vals[i];
            }
        }
    }
    std::string out =
        "dataset,world,n,S_mean,S_std,U_mean,U_std,HM_mean,HM_std,AUC_mean,AUC_std\n";
    for (const auto& [key, acc] : groups) {
        out += key + "," + std::to_string(acc.n);
        for (int i = 0; i < 4; ++i) {
            double mean = acc.sum[i] / acc.n;
            double var = acc.n > 1 ? (acc.sq[i] - acc.n * mean * mean) / (acc.n - 1) : 0.0;
            out += "," + fmt17(mean) + "," + fmt17(std::sqrt(std::max(0.0, var)));
        }
        out += "\n";
    }
    return out;
}

}  // namespace czsl
