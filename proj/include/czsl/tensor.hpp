#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "czsl/errors.hpp"
#include "czsl/rng.hpp"

namespace czsl {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense n-d array of doubles in row-major order, doubling as a node of the
// reverse-mode computation record. Ops stamp each result with a global
// execution sequence number; backward() replays adjoints in reverse stamp
// order, visiting each recorded op exactly once. Leaf gradients accumulate
// across backward calls until zero_grad().
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation

    // Reverse-mode record (populated only when requires_grad).
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;
    int64_t seq = 0;
    bool backward_done = false;  // set on the node backward() was called on

    int64_t size() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int dim(int axis) const { return shape[static_cast<size_t>(axis)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.clear(); }

    static TensorPtr create(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr from(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
    static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);
};

// Scoped gradient-recording switch (on by default, per thread). Evaluation
// paths run inside a NoGradGuard so no record is built.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// ---- Primitive operations. Each records its adjoint when any input
// ---- requires grad and recording is enabled.

// 2-d [m,k]x[k,n] or batched 3-d [B,m,k]x[B,k,n] product.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
// Axis permutation, e.g. permute(x, {1,0,2}).
TensorPtr permute(const TensorPtr& x, const std::vector<int>& axes);
TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape);
// Contiguous slice [start, start+len) along one axis.
TensorPtr slice(const TensorPtr& x, int axis, int start, int len);
TensorPtr softmax(const TensorPtr& x, int axis);
// Normalization over the last axis with learnable gain/offset.
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& offset,
                     double eps = 1e-5);
TensorPtr relu(const TensorPtr& x);
// Training-mode dropout zeroes entries with probability p and scales the
// survivors by 1/(1-p); evaluation mode and p == 0 return x unchanged.
TensorPtr dropout(const TensorPtr& x, double p, bool train, RngStream& rng);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
// Broadcast-add a [d] row vector over the last axis.
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v);
TensorPtr scale(const TensorPtr& x, double c);
// Multiply by a trainable scalar (shape [1]) tensor.
TensorPtr scalar_mul(const TensorPtr& s, const TensorPtr& x);
TensorPtr concat_last_axis(const std::vector<TensorPtr>& parts);
// Row gather from a [V,d] table; adjoint scatter-adds.
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& indices);
// L2-normalize rows over the last axis; r = sqrt(sum x^2 + eps).
TensorPtr unit_rows(const TensorPtr& x, double eps = 1e-12);
TensorPtr sum_all(const TensorPtr& x);

struct CrossEntropyStats {
    int64_t floored = 0;  // true-label probabilities clamped at the floor
};
// Mean negative log probability of the true class; probabilities below
// `floor` are clamped (and counted in stats) so the loss stays finite.
TensorPtr cross_entropy_from_probs(const TensorPtr& probs, const std::vector<int>& labels,
                                   double floor = 1e-12, CrossEntropyStats* stats = nullptr);

// Replays the record reachable from `root` (a scalar) once, in reverse
// execution order. A second backward on the same root is rejected.
void backward(const TensorPtr& root);

// ---- Utilities.
bool all_finite(const Tensor& t);
bool same_shape(const Tensor& a, const Tensor& b);
// Elementwise equality of values (bit-identity for non-zero finite data).
bool bit_equal(const Tensor& a, const Tensor& b);
uint64_t checksum(const Tensor& t);

TensorPtr random_normal(std::vector<int> shape, RngStream& rng, double stddev = 1.0,
                        bool requires_grad = false);
TensorPtr random_uniform(std::vector<int> shape, RngStream& rng, double lo, double hi,
                         bool requires_grad = false);
// Matrix with orthonormal rows (n <= m) or columns (n > m).
TensorPtr random_orthogonal(int n, int m, RngStream& rng, bool requires_grad = false);
// Variance-scaled uniform (Glorot) init for an [in,out] weight.
TensorPtr glorot_uniform(int in_dim, int out_dim, RngStream& rng, bool requires_grad = true);

}  // namespace czsl
