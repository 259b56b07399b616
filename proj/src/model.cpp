#include "czsl/model.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace czsl {

Variant variant_from_string(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "agg_a") return Variant::AggFirstLast;
    if (name == "agg_b") return Variant::AggMean;
    if (name == "ms_a") return Variant::NoStage1;
    if (name == "ms_b") return Variant::NoStage2;
    if (name == "df") return Variant::NoDirectTerm;
    throw UsageError("unknown ablation variant '" + name +
                     "' (expected full|agg_a|agg_b|ms_a|ms_b|df)");
}

const char* variant_to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::AggFirstLast: return "agg_a";
        case Variant::AggMean: return "agg_b";
        case Variant::NoStage1: return "ms_a";
        case Variant::NoStage2: return "ms_b";
        default: return "df";
    }
}

void ModelConfig::validate() const {
    encoder.validate();
    if (n_low <= 0 || m_high <= 0)
        throw ConfigError("aggregation windows must be positive");
    if (n_low + m_high > encoder.blocks)
        throw ConfigError("aggregation windows n_low + m_high = " +
                          std::to_string(n_low + m_high) + " exceed encoder depth " +
                          std::to_string(encoder.blocks));
    if (agg_dropout < 0.0 || agg_dropout >= 1.0)
        throw ConfigError("aggregation dropout must lie in [0,1)");
    interaction.validate(encoder.dim);
    loss_weights.validate();
    if (temperature <= 0.0) throw ConfigError("temperature must be positive");
}

Model::Branch Model::make_branch(const std::string& name, int dim, uint64_t seed) const {
    Branch b;
    bool use_stage1 =
        config_.variant != Variant::NoStage1;
    bool use_stage2 = config_.variant != Variant::NoStage2;
    auto rng1 = rng_stream(seed, "init.interaction." + name + ".stage1");
    auto rng2 = rng_stream(seed, "init.interaction." + name + ".stage2");
    if (use_stage1) b.stage1 = InteractionStage::init(dim, config_.interaction, rng1);
    if (use_stage2) b.stage2 = InteractionStage::init(dim, config_.interaction, rng2);
    FusionWeights fw;
    fw.lambda1 = use_stage1 ? Tensor::scalar(config_.interaction.lambda_init, true) : nullptr;
    fw.lambda2 = use_stage2 ? Tensor::scalar(config_.interaction.lambda_init, true) : nullptr;
    b.fusion = fw;
    return b;
}

Model::Model(const ModelConfig& config, const CompositionSpace& space, uint64_t seed)
    : config_(config),
      space_(space),
      seed_(seed),
      dropout_rng_(rng_stream(seed, "dropout")) {
    config_.validate();
    space_.validate();
    int d = config_.encoder.dim;
    encoder_ = std::make_unique<VisualEncoder>(config_.encoder, seed);
    prompts_ = std::make_unique<PromptBuilder>(space_.num_states(), space_.num_objects(), d, seed);
    heads_ = std::make_unique<VisualHeads>(d, seed);
    bool learned_agg =
        config_.variant != Variant::AggFirstLast && config_.variant != Variant::AggMean;
    if (learned_agg) {
        agg_low_ = std::make_unique<Aggregator>(
            AggregatorConfig{config_.n_low, WindowEnd::FirstN, config_.agg_dropout}, d, seed,
            "low");
        agg_high_ = std::make_unique<Aggregator>(
            AggregatorConfig{config_.m_high, WindowEnd::LastM, config_.agg_dropout}, d, seed,
            "high");
    }
    com_ = make_branch("com", d, seed);
    state_ = make_branch("state", d, seed);
    obj_ = make_branch("obj", d, seed);
}

Model::Features Model::visual_features(const TensorPtr& batch) const {
    Features f;
    f.stack = encoder_->encode(batch);
    switch (config_.variant) {
        case Variant::AggFirstLast:
            f.low = f.stack.layers.front();
            f.high = f.stack.layers.back();
            break;
        case Variant::AggMean: {
            auto mean_of = [&](WindowEnd end, int count) {
                auto joined = concat_window(f.stack, end, count);
                int b = joined->dim(0), l = joined->dim(1), d = f.stack.dim;
                // Mean over the window = mean over the concatenated chunks.
                TensorPtr acc;
                for (int i = 0; i < count; ++i) {
                    auto part = slice(joined, 2, i * d, d);
                    acc = acc ? add(acc, part) : part;
                }
                (void)b;
                (void)l;
                return scale(acc, 1.0 / count);
            };
            f.low = mean_of(WindowEnd::FirstN, config_.n_low);
            f.high = mean_of(WindowEnd::LastM, config_.m_high);
            break;
        }
        default:
            f.low = agg_low_->forward(f.stack, training_, dropout_rng_);
            f.high = agg_high_->forward(f.stack, training_, dropout_rng_);
    }
    f.cls = f.stack.final_cls();
    return f;
}

TensorPtr Model::branch_prompt(const Branch& branch, const TensorPtr& t, const TensorPtr& f_low,
                               const TensorPtr& f_high) const {
    const auto& fusion = *branch.fusion;
    switch (config_.variant) {
        case Variant::NoStage1: {
            auto t2 = stage_forward(t, f_high, *branch.stage2, training_, dropout_rng_);
            return add(t, scalar_mul(fusion.lambda2, t2));
        }
        case Variant::NoStage2: {
            auto t1 = stage_forward(t, f_low, *branch.stage1, training_, dropout_rng_);
            return add(t, scalar_mul(fusion.lambda1, t1));
        }
        case Variant::NoDirectTerm: {
            auto t1 = stage_forward(t, f_low, *branch.stage1, training_, dropout_rng_);
            auto t2 = stage_forward(t1, f_high, *branch.stage2, training_, dropout_rng_);
            return add(t, scalar_mul(fusion.lambda2, t2));
        }
        default: {
            auto t1 = stage_forward(t, f_low, *branch.stage1, training_, dropout_rng_);
            auto t2 = stage_forward(t1, f_high, *branch.stage2, training_, dropout_rng_);
            return fuse(t, t1, t2, fusion);
        }
    }
}

Model::FusedPrompts Model::fused_prompts(const TensorPtr& batch,
                                         const CandidateIndex& candidates) const {
    auto feats = visual_features(batch);
    auto bank = prompts_->build(space_, candidates.pairs);
    FusedPrompts out;
    out.t_com = branch_prompt(com_, bank.t_com, feats.low, feats.high);
    out.t_state = branch_prompt(state_, bank.t_state, feats.low, feats.high);
    out.t_obj = branch_prompt(obj_, bank.t_obj, feats.low, feats.high);
    return out;
}

Model::BranchOutput Model::forward(const TensorPtr& batch,
                                   const CandidateIndex& candidates) const {
    auto feats = visual_features(batch);
    auto heads = heads_->forward(feats.cls);
    auto bank = prompts_->build(space_, candidates.pairs);

    auto t_com = branch_prompt(com_, bank.t_com, feats.low, feats.high);
    auto t_state = branch_prompt(state_, bank.t_state, feats.low, feats.high);
    auto t_obj = branch_prompt(obj_, bank.t_obj, feats.low, feats.high);

    BranchOutput out;
    out.p_com = branch_probs(heads.v_com, t_com, config_.temperature);
    out.p_state = branch_probs(heads.v_state, t_state, config_.temperature);
    out.p_obj = branch_probs(heads.v_obj, t_obj, config_.temperature);
    return out;
}

Model::LossOutput Model::loss(const TensorPtr& batch, const std::vector<int>& state_labels,
                              const std::vector<int>& object_labels,
                              const std::vector<int>& pair_labels,
                              const CandidateIndex& train_candidates) const {
    auto probs = forward(batch, train_candidates);
    LossOutput out;
    out.loss_s = branch_loss(probs.p_state, state_labels, &out.ce_stats);
    out.loss_o = branch_loss(probs.p_obj, object_labels, &out.ce_stats);
    out.loss_c = branch_loss(probs.p_com, pair_labels, &out.ce_stats);
    out.total = total_loss(out.loss_s, out.loss_o, out.loss_c, config_.loss_weights);
    return out;
}

ParamList Model::parameters() const {
    ParamList out = encoder_->parameters("encoder");
    append_params(out, prompts_->parameters("prompts"));
    append_params(out, heads_->parameters("heads"));
    if (agg_low_) append_params(out, agg_low_->parameters("agg.low"));
    if (agg_high_) append_params(out, agg_high_->parameters("agg.high"));
    auto add_branch = [&](const char* name, const Branch& b) {
        std::string bp = std::string("interaction.") + name;
        if (b.stage1) append_params(out, b.stage1->parameters(bp + ".stage1"));
        if (b.stage2) append_params(out, b.stage2->parameters(bp + ".stage2"));
        if (b.fusion && b.fusion->lambda1)
            out.push_back({bp + ".lambda1", b.fusion->lambda1, true});
        if (b.fusion && b.fusion->lambda2)
            out.push_back({bp + ".lambda2", b.fusion->lambda2, true});
    };
    add_branch("com", com_);
    add_branch("state", state_);
    add_branch("obj", obj_);
    return out;
}

ParamList Model::trainable_parameters() const {
    ParamList out;
    for (auto& p : parameters())
        if (p.trainable) out.push_back(p);
    return out;
}

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'Z', 'S', 'L', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const ParamList& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("cannot write checkpoint " + path);
    f.write(kCheckpointMagic, 8);
    uint32_t version = 1;
    uint64_t count = params.size();
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& p : params) {
        uint32_t name_len = static_cast<uint32_t>(p.name.size());
        f.write(reinterpret_cast<const char*>(&name_len), 4);
        f.write(p.name.data(), name_len);
        uint32_t rank = static_cast<uint32_t>(p.value->shape.size());
        f.write(reinterpret_cast<const char*>(&rank), 4);
        for (int d : p.value->shape) {
            uint64_t dim = static_cast<uint64_t>(d);
            f.write(reinterpret_cast<const char*>(&dim), 8);
        }
        f.write(reinterpret_cast<const char*>(p.value->data.data()),
                static_cast<std::streamsize>(p.value->data.size() * sizeof(double)));
    }
}

void load_checkpoint(const ParamList& params, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("cannot read checkpoint " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IntegrityError("bad checkpoint header in " + path);
    uint32_t version = 0;
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&count), 8);
    if (!f || version != 1) throw IntegrityError("unsupported checkpoint version in " + path);

    std::map<std::string, TensorPtr> by_name;
    for (const auto& p : params) by_name[p.name] = p.value;
    size_t matched = 0;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), 4);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t rank = 0;
        f.read(reinterpret_cast<char*>(&rank), 4);
        std::vector<int> shape(rank);
        for (uint32_t k = 0; k < rank; ++k) {
            uint64_t dim = 0;
            f.read(reinterpret_cast<char*>(&dim), 8);
            shape[k] = static_cast<int>(dim);
        }
        int64_t n = 1;
        for (int d : shape) n *= d;
        std::vector<double> values(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!f) throw IntegrityError("truncated checkpoint " + path);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw IntegrityError("checkpoint entry '" + name + "' has no matching parameter");
        if (it->second->shape != shape)
            throw DimensionError("checkpoint entry '" + name + "' shape " + shape_str(shape) +
                                 " does not match parameter " + shape_str(it->second->shape));
        it->second->data = std::move(values);
        ++matched;
    }
    if (matched != params.size())
        throw IntegrityError("checkpoint covers " + std::to_string(matched) + " of " +
                             std::to_string(params.size()) + " parameters");
}

}  // namespace czsl
