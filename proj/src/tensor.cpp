#include "czsl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace czsl {

namespace {

std::atomic<int64_t> g_seq{0};
thread_local bool g_grad_enabled = true;

int64_t product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_shape(const std::vector<int>& shape) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }
}

// Attach the adjoint closure when recording is active and any parent needs grads.
void record(const TensorPtr& out, std::vector<TensorPtr> parents, std::function<void()> fn) {
    if (!g_grad_enabled) return;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (!needs) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

// C[m,n] += A[m,k] * B[k,n]; four A-rows per pass so B rows are reused.
void mm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + static_cast<int64_t>(i) * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        double* c0 = c + static_cast<int64_t>(i) * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        for (int p = 0; p < k; ++p) {
            const double* brow = b + static_cast<int64_t>(p) * n;
            double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            for (int j = 0; j < n; ++j) {
                double bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += G[m,n] * B[k,n]^T
void mm_nt(const double* __restrict g, const double* __restrict b, double* __restrict c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* grow = g + static_cast<int64_t>(i) * n;
        double* crow = c + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* brow = b + static_cast<int64_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * G[m,n]; four A-rows per pass so G rows are reused.
void mm_tn(const double* __restrict a, const double* __restrict g, double* __restrict c, int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + static_cast<int64_t>(i) * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        const double* g0 = g + static_cast<int64_t>(i) * n;
        const double* g1 = g0 + n;
        const double* g2 = g1 + n;
        const double* g3 = g2 + n;
        for (int p = 0; p < k; ++p) {
            double* crow = c + static_cast<int64_t>(p) * n;
            double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            for (int j = 0; j < n; ++j)
                crow[j] += v0 * g0[j] + v1 * g1[j] + v2 * g2[j] + v3 * g3[j];
        }
    }
    for (; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        const double* grow = g + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            double* crow = c + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
    std::vector<int64_t> s(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        s[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return s;
}

}  // namespace

TensorPtr Tensor::create(std::vector<int> shape, bool requires_grad) {
    check_shape(shape);
    auto t = std::make_shared<Tensor>();
    t->data.assign(static_cast<size_t>(product(shape)), 0.0);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    t->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (product(shape) != static_cast<int64_t>(values.size()))
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
    auto t = Tensor::create(std::move(shape), requires_grad);
    t->data = std::move(values);
    return t;
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor::create(std::move(shape), requires_grad);
}

TensorPtr Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    auto t = Tensor::create(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return Tensor::from({1}, {value}, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() == 2 && b->rank() == 2) {
        int m = a->dim(0), k = a->dim(1);
        if (b->dim(0) != k)
            throw DimensionError("matmul inner dimensions disagree: " + shape_str(a->shape) +
                                 " x " + shape_str(b->shape));
        int n = b->dim(1);
        auto out = Tensor::create({m, n});
        mm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n);
        Tensor* o = out.get();
        record(out, {a, b}, [a, b, o, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                mm_nt(o->grad.data(), b->data.data(), a->grad.data(), m, n, k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                mm_tn(a->data.data(), o->grad.data(), b->grad.data(), m, k, n);
            }
        });
        return out;
    }
    if (a->rank() == 3 && b->rank() == 3) {
        int bs = a->dim(0), m = a->dim(1), k = a->dim(2);
        if (b->dim(0) != bs || b->dim(1) != k)
            throw DimensionError("batched matmul shapes disagree: " + shape_str(a->shape) +
                                 " x " + shape_str(b->shape));
        int n = b->dim(2);
        auto out = Tensor::create({bs, m, n});
        for (int s = 0; s < bs; ++s)
            mm_nn(a->data.data() + static_cast<int64_t>(s) * m * k,
                  b->data.data() + static_cast<int64_t>(s) * k * n,
                  out->data.data() + static_cast<int64_t>(s) * m * n, m, k, n);
        Tensor* o = out.get();
        record(out, {a, b}, [a, b, o, bs, m, k, n] {
            for (int s = 0; s < bs; ++s) {
                const double* ga = o->grad.data() + static_cast<int64_t>(s) * m * n;
                if (a->requires_grad) {
                    a->ensure_grad();
                    mm_nt(ga, b->data.data() + static_cast<int64_t>(s) * k * n,
                          a->grad.data() + static_cast<int64_t>(s) * m * k, m, n, k);
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    mm_tn(a->data.data() + static_cast<int64_t>(s) * m * k, ga,
                          b->grad.data() + static_cast<int64_t>(s) * k * n, m, k, n);
                }
            }
        });
        return out;
    }
    throw DimensionError("matmul expects matching 2-d or 3-d operands, got " +
                         shape_str(a->shape) + " x " + shape_str(b->shape));
}

namespace {

// out[multi] = in[multi mapped through axes]; walk = false reverses direction
// for the adjoint (in.grad[...] += out.grad[...]).
void permute_copy(const std::vector<int>& in_shape, const std::vector<int>& axes,
                  const double* src, double* dst, bool forward) {
    int r = static_cast<int>(in_shape.size());
    std::vector<int> out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    auto in_str = strides_of(in_shape);
    int64_t n = product(in_shape);
    std::vector<int> idx(static_cast<size_t>(r), 0);
    for (int64_t lin = 0; lin < n; ++lin) {
        int64_t in_lin = 0;
        for (int i = 0; i < r; ++i)
            in_lin += static_cast<int64_t>(idx[static_cast<size_t>(i)]) * in_str[static_cast<size_t>(axes[static_cast<size_t>(i)])];
        // lin is the output linear index: idx walks the output shape.
        if (forward)
            dst[lin] = src[in_lin];
        else
            dst[in_lin] += src[lin];
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
}

}  // namespace

TensorPtr permute(const TensorPtr& x, const std::vector<int>& axes) {
    int r = x->rank();
    if (static_cast<int>(axes.size()) != r)
        throw DimensionError("permute axes count " + std::to_string(axes.size()) +
                             " does not match rank of " + shape_str(x->shape));
    std::vector<bool> used(static_cast<size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r || used[static_cast<size_t>(a)])
            throw DimensionError("invalid permutation for shape " + shape_str(x->shape));
        used[static_cast<size_t>(a)] = true;
    }
    std::vector<int> out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x->dim(axes[static_cast<size_t>(i)]);
    auto out = Tensor::create(out_shape);
    permute_copy(x->shape, axes, x->data.data(), out->data.data(), true);
    Tensor* o = out.get();
    std::vector<int> ax = axes;
    record(out, {x}, [x, o, ax] {
        x->ensure_grad();
        permute_copy(x->shape, ax, o->grad.data(), x->grad.data(), false);
    });
    return out;
}

TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape) {
    check_shape(new_shape);
    if (product(new_shape) != x->size())
        throw DimensionError("reshape " + shape_str(x->shape) + " -> " + shape_str(new_shape) +
                             " changes element count");
    auto out = Tensor::create(new_shape);
    out->data = x->data;
    Tensor* o = out.get();
    record(out, {x}, [x, o] {
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i];
    });
    return out;
}

TensorPtr slice(const TensorPtr& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x->rank())
        throw DimensionError("slice axis " + std::to_string(axis) + " invalid for " +
                             shape_str(x->shape));
    int d = x->dim(axis);
    if (start < 0 || len <= 0 || start + len > d)
        throw DimensionError("slice [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") outside axis of length " +
                             std::to_string(d));
    std::vector<int> out_shape = x->shape;
    out_shape[static_cast<size_t>(axis)] = len;
    auto out = Tensor::create(out_shape);
    int64_t inner = 1;
    for (int i = axis + 1; i < x->rank(); ++i) inner *= x->dim(i);
    int64_t outer = x->size() / (inner * d);
    for (int64_t ou = 0; ou < outer; ++ou) {
        const double* src = x->data.data() + (ou * d + start) * inner;
        double* dst = out->data.data() + ou * len * inner;
        std::memcpy(dst, src, static_cast<size_t>(len * inner) * sizeof(double));
    }
    Tensor* o = out.get();
    record(out, {x}, [x, o, outer, inner, d, start, len] {
        x->ensure_grad();
        for (int64_t ou = 0; ou < outer; ++ou) {
            double* dst = x->grad.data() + (ou * d + start) * inner;
            const double* src = o->grad.data() + ou * len * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

TensorPtr softmax(const TensorPtr& x, int axis) {
    if (axis < 0 || axis >= x->rank())
        throw DimensionError("softmax axis " + std::to_string(axis) + " invalid for " +
                             shape_str(x->shape));
    int n = x->dim(axis);
    if (n == 0) throw DimensionError("softmax over empty axis");
    int64_t inner = 1;
    for (int i = axis + 1; i < x->rank(); ++i) inner *= x->dim(i);
    int64_t outer = x->size() / (inner * n);
    auto out = Tensor::create(x->shape);
    for (int64_t ou = 0; ou < outer; ++ou) {
        for (int64_t in = 0; in < inner; ++in) {
            const double* src = x->data.data() + ou * n * inner + in;
            double* dst = out->data.data() + ou * n * inner + in;
            double mx = src[0];
            for (int i = 1; i < n; ++i) mx = std::max(mx, src[static_cast<int64_t>(i) * inner]);
            double sum = 0.0;
            for (int i = 0; i < n; ++i) {
                double e = std::exp(src[static_cast<int64_t>(i) * inner] - mx);
                dst[static_cast<int64_t>(i) * inner] = e;
                sum += e;
            }
            for (int i = 0; i < n; ++i) dst[static_cast<int64_t>(i) * inner] /= sum;
        }
    }
    Tensor* o = out.get();
    record(out, {x}, [x, o, outer, inner, n] {
        x->ensure_grad();
        for (int64_t ou = 0; ou < outer; ++ou) {
            for (int64_t in = 0; in < inner; ++in) {
                const double* y = o->data.data() + ou * n * inner + in;
                const double* g = o->grad.data() + ou * n * inner + in;
                double* gx = x->grad.data() + ou * n * inner + in;
                double dot = 0.0;
                for (int i = 0; i < n; ++i)
                    dot += y[static_cast<int64_t>(i) * inner] * g[static_cast<int64_t>(i) * inner];
                for (int i = 0; i < n; ++i) {
                    int64_t k = static_cast<int64_t>(i) * inner;
                    gx[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
    return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& offset,
                     double eps) {
    if (eps <= 0.0) throw ParameterError("layer_norm eps must be positive");
    int d = x->dim(x->rank() - 1);
    if (gain->size() != d || offset->size() != d)
        throw DimensionError("layer_norm gain/offset must have length " + std::to_string(d));
    int64_t rows = x->size() / d;
    auto out = Tensor::create(x->shape);
    // Normalized values are recomputed in the adjoint from saved statistics.
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * 2);
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = x->data.data() + r * d;
        double* dst = out->data.data() + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += src[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            double c = src[i] - mean;
            var += c * c;
        }
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(r) * 2] = mean;
        (*stats)[static_cast<size_t>(r) * 2 + 1] = inv;
        for (int i = 0; i < d; ++i)
            dst[i] = (src[i] - mean) * inv * gain->data[static_cast<size_t>(i)] +
                     offset->data[static_cast<size_t>(i)];
    }
    Tensor* o = out.get();
    record(out, {x, gain, offset}, [x, gain, offset, o, rows, d, stats] {
        for (int64_t r = 0; r < rows; ++r) {
            const double* src = x->data.data() + r * d;
            const double* g = o->grad.data() + r * d;
            double mean = (*stats)[static_cast<size_t>(r) * 2];
            double inv = (*stats)[static_cast<size_t>(r) * 2 + 1];
            if (offset->requires_grad) {
                offset->ensure_grad();
                for (int i = 0; i < d; ++i) offset->grad[static_cast<size_t>(i)] += g[i];
            }
            if (gain->requires_grad) {
                gain->ensure_grad();
                for (int i = 0; i < d; ++i)
                    gain->grad[static_cast<size_t>(i)] += g[i] * (src[i] - mean) * inv;
            }
            if (x->requires_grad) {
                x->ensure_grad();
                double* gx = x->grad.data() + r * d;
                double sum_gh = 0.0, sum_ghx = 0.0;
                for (int i = 0; i < d; ++i) {
                    double gh = g[i] * gain->data[static_cast<size_t>(i)];
                    double xh = (src[i] - mean) * inv;
                    sum_gh += gh;
                    sum_ghx += gh * xh;
                }
                for (int i = 0; i < d; ++i) {
                    double gh = g[i] * gain->data[static_cast<size_t>(i)];
                    double xh = (src[i] - mean) * inv;
                    gx[i] += inv * (gh - sum_gh / d - xh * sum_ghx / d);
                }
            }
        }
    });
    return out;
}

TensorPtr relu(const TensorPtr& x) {
    auto out = Tensor::create(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    Tensor* o = out.get();
    record(out, {x}, [x, o] {
        x->ensure_grad();
        for (size_t i = 0; i < x->data.size(); ++i)
            if (x->data[i] > 0.0) x->grad[i] += o->grad[i];
    });
    return out;
}

TensorPtr dropout(const TensorPtr& x, double p, bool train, RngStream& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ParameterError("dropout probability must lie in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(x->data.size());
    double keep_scale = 1.0 / (1.0 - p);
    auto out = Tensor::create(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) {
        double m = rng.uniform() < p ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out->data[i] = x->data[i] * m;
    }
    Tensor* o = out.get();
    record(out, {x}, [x, o, mask] {
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i] * (*mask)[i];
    });
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (!same_shape(*a, *b))
        throw DimensionError("add shapes disagree: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    auto out = Tensor::create(a->shape);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += o->grad[i];
        }
    });
    return out;
}

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v) {
    int d = x->dim(x->rank() - 1);
    if (v->rank() != 1 || v->dim(0) != d)
        throw DimensionError("add_rowvec expects vector of length " + std::to_string(d) +
                             ", got " + shape_str(v->shape));
    int64_t rows = x->size() / d;
    auto out = Tensor::create(x->shape);
    for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i)
            out->data[static_cast<size_t>(r * d + i)] =
                x->data[static_cast<size_t>(r * d + i)] + v->data[static_cast<size_t>(i)];
    Tensor* o = out.get();
    record(out, {x, v}, [x, v, o, rows, d] {
        if (x->requires_grad) {
            x->ensure_grad();
            for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i];
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < d; ++i)
                    v->grad[static_cast<size_t>(i)] += o->grad[static_cast<size_t>(r * d + i)];
        }
    });
    return out;
}

TensorPtr scale(const TensorPtr& x, double c) {
    auto out = Tensor::create(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * c;
    Tensor* o = out.get();
    record(out, {x}, [x, o, c] {
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i] * c;
    });
    return out;
}

TensorPtr scalar_mul(const TensorPtr& s, const TensorPtr& x) {
    if (s->size() != 1)
        throw DimensionError("scalar_mul expects a [1] scalar, got " + shape_str(s->shape));
    double sv = s->data[0];
    auto out = Tensor::create(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * sv;
    Tensor* o = out.get();
    record(out, {s, x}, [s, x, o, sv] {
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0.0;
            for (size_t i = 0; i < x->data.size(); ++i) acc += o->grad[i] * x->data[i];
            s->grad[0] += acc;
        }
        if (x->requires_grad) {
            x->ensure_grad();
            for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i] * sv;
        }
    });
    return out;
}

TensorPtr concat_last_axis(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_last_axis needs at least one input");
    int r = parts[0]->rank();
    std::vector<int> lead(parts[0]->shape.begin(), parts[0]->shape.end() - 1);
    int total_last = 0;
    for (const auto& p : parts) {
        if (p->rank() != r ||
            !std::equal(lead.begin(), lead.end(), p->shape.begin()))
            throw DimensionError("concat_last_axis inputs disagree on leading axes: " +
                                 shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
        total_last += p->dim(r - 1);
    }
    std::vector<int> out_shape = lead;
    out_shape.push_back(total_last);
    auto out = Tensor::create(out_shape);
    int64_t rows = out->size() / total_last;
    int64_t off = 0;
    for (const auto& p : parts) {
        int w = p->dim(r - 1);
        for (int64_t row = 0; row < rows; ++row)
            std::memcpy(out->data.data() + row * total_last + off,
                        p->data.data() + row * w, static_cast<size_t>(w) * sizeof(double));
        off += w;
    }
    Tensor* o = out.get();
    std::vector<TensorPtr> ps = parts;
    record(out, ps, [ps, o, rows, total_last] {
        int64_t off = 0;
        for (const auto& p : ps) {
            int w = p->dim(p->rank() - 1);
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t row = 0; row < rows; ++row) {
                    const double* g = o->grad.data() + row * total_last + off;
                    double* dst = p->grad.data() + row * w;
                    for (int i = 0; i < w; ++i) dst[i] += g[i];
                }
            }
            off += w;
        }
    });
    return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& indices) {
    if (table->rank() != 2)
        throw DimensionError("gather_rows expects a 2-d table, got " + shape_str(table->shape));
    int v = table->dim(0), d = table->dim(1);
    for (int i : indices)
        if (i < 0 || i >= v)
            throw VocabularyError("row index " + std::to_string(i) +
                                  " outside table of " + std::to_string(v) + " rows");
    auto out = Tensor::create({static_cast<int>(indices.size()), d});
    for (size_t r = 0; r < indices.size(); ++r)
        std::memcpy(out->data.data() + r * static_cast<size_t>(d),
                    table->data.data() + static_cast<size_t>(indices[r]) * static_cast<size_t>(d),
                    static_cast<size_t>(d) * sizeof(double));
    Tensor* o = out.get();
    std::vector<int> idx = indices;
    record(out, {table}, [table, o, idx, d] {
        table->ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r) {
            double* dst = table->grad.data() + static_cast<size_t>(idx[r]) * static_cast<size_t>(d);
            const double* g = o->grad.data() + r * static_cast<size_t>(d);
            for (int i = 0; i < d; ++i) dst[i] += g[i];
        }
    });
    return out;
}

TensorPtr unit_rows(const TensorPtr& x, double eps) {
    int d = x->dim(x->rank() - 1);
    int64_t rows = x->size() / d;
    auto out = Tensor::create(x->shape);
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = x->data.data() + r * d;
        double* dst = out->data.data() + r * d;
        double ss = 0.0;
        for (int i = 0; i < d; ++i) ss += src[i] * src[i];
        double inv = 1.0 / std::sqrt(ss + eps);
        (*inv_norm)[static_cast<size_t>(r)] = inv;
        for (int i = 0; i < d; ++i) dst[i] = src[i] * inv;
    }
    Tensor* o = out.get();
    record(out, {x}, [x, o, rows, d, inv_norm] {
        x->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = o->data.data() + r * d;
            const double* g = o->grad.data() + r * d;
            double* gx = x->grad.data() + r * d;
            double inv = (*inv_norm)[static_cast<size_t>(r)];
            double dot = 0.0;
            for (int i = 0; i < d; ++i) dot += y[i] * g[i];
            for (int i = 0; i < d; ++i) gx[i] += (g[i] - y[i] * dot) * inv;
        }
    });
    return out;
}

TensorPtr sum_all(const TensorPtr& x) {
    auto out = Tensor::create({1});
    double acc = 0.0;
    for (double v : x->data) acc += v;
    out->data[0] = acc;
    Tensor* o = out.get();
    record(out, {x}, [x, o] {
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[0];
    });
    return out;
}

TensorPtr cross_entropy_from_probs(const TensorPtr& probs, const std::vector<int>& labels,
                                   double floor, CrossEntropyStats* stats) {
    if (probs->rank() != 2)
        throw DimensionError("cross_entropy_from_probs expects [batch,classes], got " +
                             shape_str(probs->shape));
    int b = probs->dim(0), n = probs->dim(1);
    if (static_cast<int>(labels.size()) != b)
        throw DimensionError("label count " + std::to_string(labels.size()) +
                             " does not match batch " + std::to_string(b));
    for (int y : labels)
        if (y < 0 || y >= n)
            throw ParameterError("label " + std::to_string(y) + " outside [0," +
                                 std::to_string(n) + ")");
    auto out = Tensor::create({1});
    double acc = 0.0;
    int64_t floored = 0;
    for (int i = 0; i < b; ++i) {
        double p = probs->data[static_cast<size_t>(i) * n + static_cast<size_t>(labels[static_cast<size_t>(i)])];
        if (p < floor) {
            p = floor;
            ++floored;
        }
        acc -= std::log(p);
    }
    out->data[0] = acc / b;
    if (stats) stats->floored += floored;
    Tensor* o = out.get();
    std::vector<int> ys = labels;
    record(out, {probs}, [probs, o, ys, b, n, floor] {
        probs->ensure_grad();
        for (int i = 0; i < b; ++i) {
            size_t k = static_cast<size_t>(i) * n + static_cast<size_t>(ys[static_cast<size_t>(i)]);
            double p = probs->data[k];
            if (p >= floor) probs->grad[k] += o->grad[0] * (-1.0 / (b * p));
        }
    });
    return out;
}

void backward(const TensorPtr& root) {
    if (root->size() != 1)
        throw DimensionError("backward expects a scalar root, got " + shape_str(root->shape));
    if (root->backward_done)
        throw IntegrityError("backward already replayed for this computation record");
    root->backward_done = true;
    if (!root->requires_grad) return;

    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<Tensor*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Tensor* t = stack.back();
        stack.pop_back();
        order.push_back(t);
        for (const auto& p : t->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Tensor* a, const Tensor* b) { return a->seq > b->seq; });

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (Tensor* t : order)
        if (t->backward_fn) t->backward_fn();
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

uint64_t checksum(const Tensor& t) {
    return fnv1a_bytes(t.data.data(), t.data.size() * sizeof(double));
}

TensorPtr random_normal(std::vector<int> shape, RngStream& rng, double stddev,
                        bool requires_grad) {
    auto t = Tensor::create(std::move(shape), requires_grad);
    for (double& v : t->data) v = rng.normal() * stddev;
    return t;
}

TensorPtr random_uniform(std::vector<int> shape, RngStream& rng, double lo, double hi,
                         bool requires_grad) {
    auto t = Tensor::create(std::move(shape), requires_grad);
    for (double& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

TensorPtr random_orthogonal(int n, int m, RngStream& rng, bool requires_grad) {
    bool transposed = n > m;
    int rows = transposed ? m : n, cols = transposed ? n : m;
    // Modified Gram-Schmidt on gaussian rows.
    std::vector<std::vector<double>> q(static_cast<size_t>(rows),
                                       std::vector<double>(static_cast<size_t>(cols)));
    for (auto& row : q)
        for (double& v : row) v = rng.normal();
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < i; ++j) {
            double dot = 0.0;
            for (int k = 0; k < cols; ++k) dot += q[static_cast<size_t>(i)][static_cast<size_t>(k)] * q[static_cast<size_t>(j)][static_cast<size_t>(k)];
            for (int k = 0; k < cols; ++k) q[static_cast<size_t>(i)][static_cast<size_t>(k)] -= dot * q[static_cast<size_t>(j)][static_cast<size_t>(k)];
        }
        double norm = 0.0;
        for (int k = 0; k < cols; ++k) norm += q[static_cast<size_t>(i)][static_cast<size_t>(k)] * q[static_cast<size_t>(i)][static_cast<size_t>(k)];
        norm = std::sqrt(norm);
        if (norm < 1e-12) norm = 1.0;
        for (int k = 0; k < cols; ++k) q[static_cast<size_t>(i)][static_cast<size_t>(k)] /= norm;
    }
    auto t = Tensor::create({n, m}, requires_grad);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            t->data[static_cast<size_t>(i) * m + static_cast<size_t>(j)] =
                transposed ? q[static_cast<size_t>(j)][static_cast<size_t>(i)] : q[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return t;
}

TensorPtr glorot_uniform(int in_dim, int out_dim, RngStream& rng, bool requires_grad) {
    double bound = std::sqrt(6.0 / (in_dim + out_dim));
    return random_uniform({in_dim, out_dim}, rng, -bound, bound, requires_grad);
}

}  // namespace czsl
