#pragma once

#include <string>
#include <vector>

#include "czsl/tensor.hpp"

namespace czsl {

// A named leaf of the model. Frozen parameters (trainable == false) never
// receive optimizer updates; they still appear in checkpoints.
struct NamedParam {
    std::string name;
    TensorPtr value;
    bool trainable = true;
};

using ParamList = std::vector<NamedParam>;

inline void append_params(ParamList& out, const ParamList& more) {
    out.insert(out.end(), more.begin(), more.end());
}

inline uint64_t frozen_checksum(const ParamList& params) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& p : params)
        if (!p.trainable)
            h = fnv1a_bytes(p.value->data.data(), p.value->data.size() * sizeof(double), h);
    return h;
}

}  // namespace czsl
