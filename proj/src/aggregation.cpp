#include "czsl/aggregation.hpp"

namespace czsl {

TensorPtr concat_window(const FeatureStack& stack, WindowEnd end, int count) {
    int s = stack.depth();
    if (count <= 0 || count > s)
        throw ConfigError("aggregation window " + std::to_string(count) +
                          " does not fit a stack of " + std::to_string(s) + " layers");
    std::vector<TensorPtr> parts;
    parts.reserve(static_cast<size_t>(count));
    int first = end == WindowEnd::FirstN ? 0 : s - count;
    for (int i = first; i < first + count; ++i)
        parts.push_back(stack.layers[static_cast<size_t>(i)]);
    return concat_last_axis(parts);
}

Aggregator::Aggregator(const AggregatorConfig& config, int dim, uint64_t seed,
                       const std::string& name)
    : config_(config), dim_(dim) {
    if (config.dropout < 0.0 || config.dropout >= 1.0)
        throw ConfigError("aggregation dropout must lie in [0,1)");
    auto rng = rng_stream(seed, "init.aggregator." + name);
    w_ = glorot_uniform(config.window * dim, dim, rng);
    b_ = Tensor::zeros({dim}, true);
    gain_ = Tensor::full({dim}, 1.0, true);
    offset_ = Tensor::zeros({dim}, true);
}

TensorPtr Aggregator::transform(const TensorPtr& concatenated, bool train,
                                RngStream& dropout_rng) const {
    int b = concatenated->dim(0), l = concatenated->dim(1), kd = concatenated->dim(2);
    if (kd != config_.window * dim_)
        throw DimensionError("aggregator sized for " + std::to_string(config_.window * dim_) +
                             " inputs, got " + shape_str(concatenated->shape));
    auto rows = reshape(concatenated, {b * l, kd});
    auto mapped = add_rowvec(matmul(rows, w_), b_);
    auto normed = layer_norm(mapped, gain_, offset_);
    auto activated = relu(normed);
    auto dropped = dropout(activated, config_.dropout, train, dropout_rng);
    return reshape(dropped, {b, l, dim_});
}

TensorPtr Aggregator::forward(const FeatureStack& stack, bool train,
                              RngStream& dropout_rng) const {
    return transform(concat_window(stack, config_.end, config_.window), train, dropout_rng);
}

ParamList Aggregator::parameters(const std::string& prefix) const {
    return {
        {prefix + ".w", w_, true},
        {prefix + ".b", b_, true},
        {prefix + ".ln.gain", gain_, true},
        {prefix + ".ln.offset", offset_, true},
    };
}

}  // namespace czsl
