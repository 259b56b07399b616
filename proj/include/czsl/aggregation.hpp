#pragma once

#include <string>

#include "czsl/encoders.hpp"
#include "czsl/params.hpp"
#include "czsl/tensor.hpp"

namespace czsl {

// Which end of the layer stack a window covers.
enum class WindowEnd { FirstN, LastM };

// Concatenation of the first N (or last M) layers along the feature axis,
// order-preserving: [b, l, K*d].
TensorPtr concat_window(const FeatureStack& stack, WindowEnd end, int count);

struct AggregatorConfig {
    int window = 3;  // N for the low aggregator, M for the high one
    WindowEnd end = WindowEnd::FirstN;
    double dropout = 0.1;
};

// Linear map from the concatenated window back to d, then layer
// normalization, ReLU and dropout, in that order.
class Aggregator {
public:
    Aggregator(const AggregatorConfig& config, int dim, uint64_t seed, const std::string& name);

    TensorPtr forward(const FeatureStack& stack, bool train, RngStream& dropout_rng) const;
    // The post-concatenation transform alone; exposed for oracle tests.
    TensorPtr transform(const TensorPtr& concatenated, bool train, RngStream& dropout_rng) const;

    ParamList parameters(const std::string& prefix) const;
    const AggregatorConfig& config() const { return config_; }

private:
    AggregatorConfig config_;
    int dim_;
    TensorPtr w_;       // [window*d, d]
    TensorPtr b_;       // [d]
    TensorPtr gain_;    // [d]
    TensorPtr offset_;  // [d]
};

}  // namespace czsl
