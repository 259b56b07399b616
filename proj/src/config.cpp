#include "czsl/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace czsl {

using nlohmann::json;

namespace {

void expect_keys(const json& j, const std::string& context,
                 std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + context + "' must be an object");
    std::string offending;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) offending += (offending.empty() ? "" : ", ") + context + "." + it.key();
    }
    if (!offending.empty()) throw ConfigError("unknown config keys: " + offending);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace

SyntheticTaskSpec RunConfig::effective_task() const {
    SyntheticTaskSpec spec = task.synthetic;
    if (!task.seed_overridden) spec.seed = train.seed;
    return spec;
}

Dataset RunConfig::build_dataset() const {
    if (task.type == TaskConfig::Type::Manifest) return load_split_dir(task.manifest_dir);
    return gen_synthetic(effective_task());
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_keys(j, "", {"task", "encoder", "aggregation", "interaction", "loss", "eval", "train"});

    RunConfig cfg;
    if (j.contains("task")) {
        const json& t = j["task"];
        std::string type = get_or<std::string>(t, "type", "synthetic");
        if (type == "synthetic") {
            expect_keys(t, "task",
                        {"type", "states", "objects", "input_dim", "samples_per_pair",
                         "val_per_pair", "test_per_pair", "unseen_ratio", "unused_ratio",
                         "locality", "noise", "state_strength", "seed"});
            auto& s = cfg.task.synthetic;
            s.states = get_or(t, "states", s.states);
            s.objects = get_or(t, "objects", s.objects);
            s.input_dim = get_or(t, "input_dim", s.input_dim);
            s.samples_per_pair = get_or(t, "samples_per_pair", s.samples_per_pair);
            s.val_per_pair = get_or(t, "val_per_pair", s.val_per_pair);
            s.test_per_pair = get_or(t, "test_per_pair", s.test_per_pair);
            s.unseen_ratio = get_or(t, "unseen_ratio", s.unseen_ratio);
            s.unused_ratio = get_or(t, "unused_ratio", s.unused_ratio);
            s.locality = get_or(t, "locality", s.locality);
            s.noise = get_or(t, "noise", s.noise);
            s.state_strength = get_or(t, "state_strength", s.state_strength);
            if (t.contains("seed")) {
                s.seed = get_or<uint64_t>(t, "seed", s.seed);
                cfg.task.seed_overridden = true;
            }
        } else if (type == "manifest") {
            expect_keys(t, "task", {"type", "dir"});
            cfg.task.type = TaskConfig::Type::Manifest;
            if (!t.contains("dir")) throw ConfigError("task.dir required for manifest tasks");
            cfg.task.manifest_dir = t["dir"].get<std::string>();
        } else {
            throw ConfigError("task.type must be 'synthetic' or 'manifest'");
        }
    }

    if (j.contains("encoder")) {
        const json& e = j["encoder"];
        expect_keys(e, "encoder",
                    {"blocks", "dim", "patches", "heads", "ffn_expansion", "lora"});
        auto& enc = cfg.model.encoder;
        enc.blocks = get_or(e, "blocks", enc.blocks);
        enc.dim = get_or(e, "dim", enc.dim);
        enc.patches = get_or(e, "patches", enc.patches);
        enc.heads = get_or(e, "heads", enc.heads);
        enc.ffn_expansion = get_or(e, "ffn_expansion", enc.ffn_expansion);
        if (e.contains("lora")) {
            const json& l = e["lora"];
            expect_keys(l, "encoder.lora", {"enabled", "rank", "scale"});
            enc.lora_enabled = get_or(l, "enabled", enc.lora_enabled);
            enc.lora_rank = get_or(l, "rank", enc.lora_rank);
            enc.lora_scale = get_or(l, "scale", enc.lora_scale);
        }
    }

    if (j.contains("aggregation")) {
        const json& a = j["aggregation"];
        expect_keys(a, "aggregation", {"n_low", "m_high", "dropout"});
        cfg.model.n_low = get_or(a, "n_low", cfg.model.n_low);
        cfg.model.m_high = get_or(a, "m_high", cfg.model.m_high);
        cfg.model.agg_dropout = get_or(a, "dropout", cfg.model.agg_dropout);
    }

    if (j.contains("interaction")) {
        const json& i = j["interaction"];
        expect_keys(i, "interaction", {"heads", "dropout", "ffn_expansion", "lambda_init"});
        auto& it = cfg.model.interaction;
        it.heads = get_or(i, "heads", it.heads);
        it.dropout = get_or(i, "dropout", it.dropout);
        it.ffn_expansion = get_or(i, "ffn_expansion", it.ffn_expansion);
        it.lambda_init = get_or(i, "lambda_init", it.lambda_init);
    }

    if (j.contains("loss")) {
        const json& l = j["loss"];
        expect_keys(l, "loss", {"alpha_s", "alpha_o", "alpha_c", "temperature"});
        auto& w = cfg.model.loss_weights;
        w.alpha_s = get_or(l, "alpha_s", w.alpha_s);
        w.alpha_o = get_or(l, "alpha_o", w.alpha_o);
        w.alpha_c = get_or(l, "alpha_c", w.alpha_c);
        cfg.model.temperature = get_or(l, "temperature", cfg.model.temperature);
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        expect_keys(e, "eval", {"world", "beta", "feasibility_threshold"});
        std::string world = get_or<std::string>(e, "world", "closed");
        if (world == "closed")
            cfg.eval_world = World::Closed;
        else if (world == "open")
            cfg.eval_world = World::Open;
        else
            throw ConfigError("eval.world must be 'closed' or 'open'");
        cfg.eval_beta = get_or(e, "beta", cfg.eval_beta);
        if (e.contains("feasibility_threshold") && !e["feasibility_threshold"].is_string())
            cfg.feasibility_threshold = e["feasibility_threshold"].get<double>();
        else if (e.contains("feasibility_threshold") &&
                 e["feasibility_threshold"].get<std::string>() != "auto")
            throw ConfigError("eval.feasibility_threshold must be a number or 'auto'");
    }

    if (j.contains("train")) {
        const json& t = j["train"];
        expect_keys(t, "train",
                    {"epochs", "batch", "seed", "lr", "lr_decay", "lr_decay_every",
                     "weight_decay"});
        auto& tr = cfg.train;
        tr.epochs = get_or(t, "epochs", tr.epochs);
        tr.batch = get_or(t, "batch", tr.batch);
        tr.seed = get_or<uint64_t>(t, "seed", tr.seed);
        tr.lr = get_or(t, "lr", tr.lr);
        tr.lr_decay = get_or(t, "lr_decay", tr.lr_decay);
        tr.lr_decay_every = get_or(t, "lr_decay_every", tr.lr_decay_every);
        tr.weight_decay = get_or(t, "weight_decay", tr.weight_decay);
    }

    // Derived wiring and early validation.
    if (cfg.task.type == TaskConfig::Type::Synthetic)
        cfg.model.encoder.input_dim = cfg.task.synthetic.input_dim;
    cfg.model.validate();
    cfg.train.validate();
    if (cfg.task.type == TaskConfig::Type::Synthetic) cfg.effective_task().validate();
    if (cfg.eval_beta < 0.0 || cfg.eval_beta > 1.0)
        throw ConfigError("eval.beta must lie in [0,1]");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string RunConfig::canonical_json() const {
    json j;
    if (task.type == TaskConfig::Type::Manifest) {
        j["task"] = {{"type", "manifest"}, {"dir", task.manifest_dir}};
    } else {
        const auto& s = task.synthetic;
        j["task"] = {{"type", "synthetic"},
                     {"states", s.states},
                     {"objects", s.objects},
                     {"input_dim", s.input_dim},
                     {"samples_per_pair", s.samples_per_pair},
                     {"val_per_pair", s.val_per_pair},
                     {"test_per_pair", s.test_per_pair},
                     {"unseen_ratio", s.unseen_ratio},
                     {"unused_ratio", s.unused_ratio},
                     {"locality", s.locality},
                     {"noise", s.noise},
                     {"state_strength", s.state_strength}};
        if (task.seed_overridden) j["task"]["seed"] = s.seed;
    }
    const auto& enc = model.encoder;
    j["encoder"] = {{"blocks", enc.blocks},
                    {"dim", enc.dim},
                    {"patches", enc.patches},
                    {"heads", enc.heads},
                    {"ffn_expansion", enc.ffn_expansion},
                    {"lora",
                     {{"enabled", enc.lora_enabled},
                      {"rank", enc.lora_rank},
                      {"scale", enc.lora_scale}}}};
    j["aggregation"] = {{"n_low", model.n_low},
                        {"m_high", model.m_high},
                        {"dropout", model.agg_dropout}};
    j["interaction"] = {{"heads", model.interaction.heads},
                        {"dropout", model.interaction.dropout},
                        {"ffn_expansion", model.interaction.ffn_expansion},
                        {"lambda_init", model.interaction.lambda_init}};
    j["loss"] = {{"alpha_s", model.loss_weights.alpha_s},
                 {"alpha_o", model.loss_weights.alpha_o},
                 {"alpha_c", model.loss_weights.alpha_c},
                 {"temperature", model.temperature}};
    j["eval"] = {{"world", world_name(eval_world)}, {"beta", eval_beta}};
    if (feasibility_threshold)
        j["eval"]["feasibility_threshold"] = *feasibility_threshold;
    else
        j["eval"]["feasibility_threshold"] = "auto";
    j["train"] = {{"epochs", train.epochs},
                  {"batch", train.batch},
                  {"seed", train.seed},
                  {"lr", train.lr},
                  {"lr_decay", train.lr_decay},
                  {"lr_decay_every", train.lr_decay_every},
                  {"weight_decay", train.weight_decay}};
    return j.dump(2);
}

uint64_t RunConfig::hash() const {
    // The seed names the run directory separately; hash the rest.
    RunConfig copy = *this;
    copy.train.seed = 0;
    if (copy.task.type == TaskConfig::Type::Synthetic && !copy.task.seed_overridden)
        copy.task.synthetic.seed = 0;
    return fnv1a(copy.canonical_json());
}

}  // namespace czsl
