#include "czsl/training.hpp"

#include <cmath>
#include <map>

namespace czsl {

void TrainConfig::validate() const {
    if (epochs <= 0 || batch <= 0) throw ConfigError("epochs and batch must be positive");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("lr_decay must lie in (0,1]");
    if (lr_decay_every <= 0) throw ConfigError("lr_decay_every must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
}

double TrainConfig::lr_at_epoch(int epoch) const {
    return lr * std::pow(lr_decay, epoch / lr_decay_every);
}

AdamOptimizer::AdamOptimizer(ParamList trainable, AdamOptions options)
    : params_(std::move(trainable)), options_(options) {
    moments_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        size_t n = params_[i].value->data.size();
        moments_[i].m.assign(n, 0.0);
        moments_[i].v.assign(n, 0.0);
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p.value->zero_grad();
}

void AdamOptimizer::step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i].value;
        bool decay = options_.weight_decay > 0.0 && p.rank() >= 2;
        p.ensure_grad();
        auto& m = moments_[i].m;
        auto& v = moments_[i].v;
        for (size_t k = 0; k < p.data.size(); ++k) {
            double g = p.grad[k];
            m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g;
            v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g * g;
            double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + options_.eps);
            p.data[k] -= lr * update;
            if (decay) p.data[k] -= lr * options_.weight_decay * p.data[k];
        }
        p.zero_grad();
    }
}

StepResult train_step(Model& model, const TensorPtr& batch,
                      const std::vector<int>& state_labels,
                      const std::vector<int>& object_labels,
                      const std::vector<int>& pair_labels,
                      const CandidateIndex& train_candidates, AdamOptimizer& optimizer,
                      double lr) {
    model.set_training(true);
    auto out = model.loss(batch, state_labels, object_labels, pair_labels, train_candidates);
    StepResult res;
    res.loss = out.total->data[0];
    res.loss_s = out.loss_s->data[0];
    res.loss_o = out.loss_o->data[0];
    res.loss_c = out.loss_c->data[0];
    res.floored = out.ce_stats.floored;
    if (!std::isfinite(res.loss))
        throw EvaluationError("non-finite training loss; branch losses: state=" +
                              std::to_string(res.loss_s) + " object=" +
                              std::to_string(res.loss_o) + " pair=" + std::to_string(res.loss_c));
    backward(out.total);
    double sq = 0.0;
    for (const auto& p : optimizer.params())
        for (double g : p.value->grad) sq += g * g;
    res.grad_norm = std::sqrt(sq);
    optimizer.step(lr);
    return res;
}

FitResult fit(Model& model, const Dataset& data, const TrainConfig& config, double eval_beta) {
    config.validate();
    if (!data.has_features())
        throw EvaluationError("dataset '" + data.name + "' carries no feature payload");

    auto candidates = CandidateIndex::build(model.space().seen_pairs, model.space());
    std::map<Pair, int> col_of;
    for (int c = 0; c < candidates.size(); ++c) col_of[candidates.pairs[static_cast<size_t>(c)]] = c;

    const SampleSet& train = data.train;
    int n = train.size(), dim = data.input_dim;
    std::vector<int> pair_label(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Pair p{train.state_label[static_cast<size_t>(i)], train.object_label[static_cast<size_t>(i)]};
        auto it = col_of.find(p);
        if (it == col_of.end())
            throw IntegrityError("training sample " + std::to_string(i) +
                                 " labeled with a pair outside the seen set");
        pair_label[static_cast<size_t>(i)] = it->second;
    }

    AdamOptimizer optimizer(model.trainable_parameters(), AdamOptions{
                                                              .weight_decay = config.weight_decay,
                                                          });
    auto shuffle_rng = rng_stream(config.seed, "train.shuffle");
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    EvalOptions val_options;
    val_options.world = World::Closed;
    val_options.beta = eval_beta;
    val_options.batch_size = config.batch;

    FitResult result;
    std::vector<std::vector<double>> best_weights;
    auto snapshot = [&] {
        best_weights.clear();
        for (const auto& p : model.parameters()) best_weights.push_back(p.value->data);
    };
    auto restore = [&] {
        auto params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i) params[i].value->data = best_weights[i];
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double lr = config.lr_at_epoch(epoch);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int steps = 0;
        for (int start = 0; start < n; start += config.batch) {
            int b = std::min(config.batch, n - start);
            auto batch = Tensor::create({b, dim});
            std::vector<int> s_lab(static_cast<size_t>(b)), o_lab(static_cast<size_t>(b)), p_lab(static_cast<size_t>(b));
            for (int r = 0; r < b; ++r) {
                int idx = order[static_cast<size_t>(start + r)];
                std::copy(train.features.begin() + static_cast<int64_t>(idx) * dim,
                          train.features.begin() + static_cast<int64_t>(idx + 1) * dim,
                          batch->data.begin() + static_cast<int64_t>(r) * dim);
                s_lab[static_cast<size_t>(r)] = train.state_label[static_cast<size_t>(idx)];
                o_lab[static_cast<size_t>(r)] = train.object_label[static_cast<size_t>(idx)];
                p_lab[static_cast<size_t>(r)] = pair_label[static_cast<size_t>(idx)];
            }
            auto step = train_step(model, batch, s_lab, o_lab, p_lab, candidates, optimizer, lr);
            loss_sum += step.loss * b;
            ++steps;
        }
        (void)steps;

        model.set_training(false);
        auto val = evaluate(model, data, Split::Val, val_options);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / n;
        rec.val = val.curve;
        result.history.push_back(rec);
        if (result.best_epoch < 0 || val.curve.auc > result.best_val_auc) {
            result.best_epoch = epoch;
            result.best_val_auc = val.curve.auc;
            snapshot();
        }
    }
    restore();
    model.set_training(false);
    return result;
}

}  // namespace czsl
