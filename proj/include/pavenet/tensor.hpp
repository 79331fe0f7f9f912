#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
// The operator set is exactly what the verification model needs: 1D
// convolution, max-pooling with argmax routing, an LSTM cell unrolled over
// time, batch normalization, softmax, and the usual elementwise/reduction
// glue. Graphs are single-use: backward() frees the tape, and a second
// backward on the same root throws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pavenet {

struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NotScalarError : std::runtime_error { using std::runtime_error::runtime_error; };
struct GraphConsumedError : std::runtime_error { using std::runtime_error::runtime_error; };

using Shape = std::vector<int>;

inline size_t numel_of(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void()> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

namespace detail {
inline int& no_grad_depth() {
    thread_local int depth = 0;
    return depth;
}
}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

// Scoped switch that stops graph construction (inference paths).
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth(); }
    ~NoGradGuard() { --detail::no_grad_depth(); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    std::shared_ptr<TensorImpl> impl;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> p) : impl(std::move(p)) {}

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (values.size() != numel_of(shape))
            throw ShapeError("value count does not match shape");
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->values = std::move(values);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(numel_of(shape), 0.0);
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor constant(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> v(numel_of(shape), value);
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double value) { return from({1}, {value}); }

    bool defined() const { return impl != nullptr; }
    const Shape& shape() const { return impl->shape; }
    int ndim() const { return static_cast<int>(impl->shape.size()); }
    int dim(int i) const { return impl->shape[static_cast<size_t>(i)]; }
    size_t numel() const { return impl->values.size(); }
    bool requires_grad() const { return impl && impl->requires_grad; }

    double* data() { return impl->values.data(); }
    const double* data() const { return impl->values.data(); }
    std::vector<double>& values() { return impl->values; }
    const std::vector<double>& values() const { return impl->values; }
    double value() const {
        if (numel() != 1) throw NotScalarError("tensor is not a scalar");
        return impl->values[0];
    }

    // 2D accessors (row-major)
    double& at(int r, int c) { return impl->values[static_cast<size_t>(r) * dim(1) + c]; }
    double at(int r, int c) const { return impl->values[static_cast<size_t>(r) * dim(1) + c]; }

    std::vector<double>& grad() { return impl->ensure_grad(); }
    void zero_grad() {
        if (!impl->grad.empty()) std::fill(impl->grad.begin(), impl->grad.end(), 0.0);
    }
};

namespace detail {

inline void accumulate(const std::shared_ptr<TensorImpl>& t, const double* g, size_t n) {
    if (!t->requires_grad) return;
    auto& dst = t->ensure_grad();
    for (size_t i = 0; i < n; ++i) dst[i] += g[i];
}

// Builds an op node. `backward` receives the node's own impl (for its grad)
// and must push gradients into the parents it captured.
inline Tensor make_node(Shape shape, std::vector<double> values,
                        std::initializer_list<Tensor> parents,
                        std::function<void(TensorImpl*)> backward) {
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    bool need = grad_enabled();
    if (need) {
        bool any = false;
        for (const Tensor& p : parents) any = any || (p.impl && p.impl->requires_grad);
        need = any;
    }
    if (need) {
        out.impl->requires_grad = true;
        for (const Tensor& p : parents)
            if (p.impl) out.impl->parents.push_back(p.impl);
        TensorImpl* self = out.impl.get();
        out.impl->backward_fn = [self, fn = std::move(backward)] { fn(self); };
    }
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return detail::make_node(a.shape(), std::move(v), {a, b}, [a, b](TensorImpl* self) {
        detail::accumulate(a.impl, self->grad.data(), self->grad.size());
        detail::accumulate(b.impl, self->grad.data(), self->grad.size());
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return detail::make_node(a.shape(), std::move(v), {a, b}, [a, b](TensorImpl* self) {
        detail::accumulate(a.impl, self->grad.data(), self->grad.size());
        if (b.impl->requires_grad) {
            auto& dst = b.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) dst[i] -= self->grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return detail::make_node(a.shape(), std::move(v), {a, b}, [a, b](TensorImpl* self) {
        if (a.impl->requires_grad) {
            auto& dst = a.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) dst[i] += self->grad[i] * b.data()[i];
        }
        if (b.impl->requires_grad) {
            auto& dst = b.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) dst[i] += self->grad[i] * a.data()[i];
        }
    });
}

// out = scale * x + shift, with constant scalars.
inline Tensor scalar_affine(const Tensor& x, double scale, double shift) {
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = scale * x.data()[i] + shift;
    return detail::make_node(x.shape(), std::move(v), {x}, [x, scale](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) dst[i] += scale * self->grad[i];
        }
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return detail::make_node(x.shape(), std::move(v), {x}, [x](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i)
                if (x.data()[i] > 0.0) dst[i] += self->grad[i];
        }
    });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
    Tensor out = detail::make_node(x.shape(), std::move(v), {x}, [x](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) {
                const double s = self->values[i];
                dst[i] += self->grad[i] * s * (1.0 - s);
            }
        }
    });
    return out;
}

inline Tensor tanh_op(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x.data()[i]);
    return detail::make_node(x.shape(), std::move(v), {x}, [x](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) {
                const double y = self->values[i];
                dst[i] += self->grad[i] * (1.0 - y * y);
            }
        }
    });
}

inline Tensor log_op(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(x.data()[i]);
    return detail::make_node(x.shape(), std::move(v), {x}, [x](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) dst[i] += self->grad[i] / x.data()[i];
        }
    });
}

// sqrt(x + eps); the offset keeps the derivative finite at x = 0.
inline Tensor sqrt_eps(const Tensor& x, double eps = 1e-12) {
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(x.data()[i] + eps);
    return detail::make_node(x.shape(), std::move(v), {x}, [x](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i)
                dst[i] += self->grad[i] * 0.5 / self->values[i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    return detail::make_node({1}, {s}, {x}, [x](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += self->grad[0];
        }
    });
}

inline Tensor mean_all(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    double s = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    return detail::make_node({1}, {s / n}, {x}, [x, n](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            const double g = self->grad[0] / n;
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += g;
        }
    });
}

// Population standard deviation over all elements. The backward guard keeps
// the gradient finite for (near-)constant inputs.
inline Tensor std_all(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    double mean = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) mean += x.data()[i];
    mean /= n;
    double var = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) {
        const double d = x.data()[i] - mean;
        var += d * d;
    }
    var /= n;
    const double sd = std::sqrt(var);
    return detail::make_node({1}, {sd}, {x}, [x, mean, sd, n](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            const double denom = n * std::max(sd, 1e-12);
            for (size_t i = 0; i < dst.size(); ++i)
                dst[i] += self->grad[0] * (x.data()[i] - mean) / denom;
        }
    });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
    return detail::make_node({1}, {s}, {a, b}, [a, b](TensorImpl* self) {
        const double g = self->grad[0];
        if (a.impl->requires_grad) {
            auto& dst = a.impl->ensure_grad();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += g * b.data()[i];
        }
        if (b.impl->requires_grad) {
            auto& dst = b.impl->ensure_grad();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += g * a.data()[i];
        }
    });
}

// x - s, s a scalar tensor broadcast over x.
inline Tensor sub_bcast(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("sub_bcast: s must be scalar");
    const double sv = s.data()[0];
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] - sv;
    return detail::make_node(x.shape(), std::move(v), {x, s}, [x, s](TensorImpl* self) {
        detail::accumulate(x.impl, self->grad.data(), self->grad.size());
        if (s.impl->requires_grad) {
            double g = 0.0;
            for (size_t i = 0; i < self->grad.size(); ++i) g += self->grad[i];
            s.impl->ensure_grad()[0] -= g;
        }
    });
}

// x / s, s a scalar tensor broadcast over x.
inline Tensor div_bcast(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("div_bcast: s must be scalar");
    const double sv = s.data()[0];
    std::vector<double> v(x.numel());
    for (size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] / sv;
    return detail::make_node(x.shape(), std::move(v), {x, s}, [x, s, sv](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) dst[i] += self->grad[i] / sv;
        }
        if (s.impl->requires_grad) {
            double g = 0.0;
            for (size_t i = 0; i < self->grad.size(); ++i) g += self->grad[i] * self->values[i];
            s.impl->ensure_grad()[0] -= g / sv;
        }
    });
}

// log(sum_i exp(x_i)) over scalar tensors, max-shifted for stability.
inline Tensor logsumexp(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("logsumexp: empty input");
    double m = xs[0].value();
    for (const Tensor& t : xs) m = std::max(m, t.value());
    double s = 0.0;
    std::vector<double> w(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        w[i] = std::exp(xs[i].value() - m);
        s += w[i];
    }
    for (double& wi : w) wi /= s;
    const double out = m + std::log(s);

    Tensor node = Tensor::from({1}, {out});
    bool need = grad_enabled();
    if (need) {
        bool any = false;
        for (const Tensor& t : xs) any = any || t.impl->requires_grad;
        need = any;
    }
    if (need) {
        node.impl->requires_grad = true;
        for (const Tensor& t : xs) node.impl->parents.push_back(t.impl);
        TensorImpl* self = node.impl.get();
        node.impl->backward_fn = [self, xs, w = std::move(w)] {
            const double g = self->grad[0];
            for (size_t i = 0; i < xs.size(); ++i)
                if (xs[i].impl->requires_grad) xs[i].impl->ensure_grad()[0] += g * w[i];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) throw ShapeError("reshape: element count mismatch");
    std::vector<double> v(x.values());
    return detail::make_node(std::move(shape), std::move(v), {x}, [x](TensorImpl* self) {
        detail::accumulate(x.impl, self->grad.data(), self->grad.size());
    });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {static_cast<int>(x.numel())}); }

// Concatenation along axis 0 (1D or 2D rows) or axis 1 (2D columns).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd || nd > 2) throw ShapeError("concat: bad axis");
    for (const Tensor& p : parts)
        if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");

    Shape out_shape = parts[0].shape();
    size_t axis_total = 0;
    for (const Tensor& p : parts) {
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != parts[0].dim(d))
                throw ShapeError("concat: non-axis dims differ");
        axis_total += static_cast<size_t>(p.dim(axis));
    }
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);

    std::vector<double> v(numel_of(out_shape));
    const int out_cols = nd == 2 ? out_shape[1] : 1;
    size_t offset = 0;  // rows for axis 0, cols for axis 1
    std::vector<size_t> offsets(parts.size());
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& p = parts[pi];
        offsets[pi] = offset;
        if (axis == 0) {
            std::copy(p.data(), p.data() + p.numel(),
                      v.begin() + static_cast<long>(offset * static_cast<size_t>(out_cols)));
            offset += static_cast<size_t>(p.dim(0));
        } else {
            const int rows = p.dim(0), cols = p.dim(1);
            for (int r = 0; r < rows; ++r)
                std::copy(p.data() + static_cast<size_t>(r) * cols,
                          p.data() + static_cast<size_t>(r + 1) * cols,
                          v.begin() + static_cast<long>(static_cast<size_t>(r) * static_cast<size_t>(out_cols) + offset));
            offset += static_cast<size_t>(p.dim(1));
        }
    }

    Tensor node = Tensor::from(out_shape, std::move(v));
    bool need = grad_enabled();
    if (need) {
        bool any = false;
        for (const Tensor& p : parts) any = any || p.impl->requires_grad;
        need = any;
    }
    if (need) {
        node.impl->requires_grad = true;
        for (const Tensor& p : parts) node.impl->parents.push_back(p.impl);
        TensorImpl* self = node.impl.get();
        const int rows0 = nd == 2 ? parts[0].dim(0) : 0;
        node.impl->backward_fn = [self, parts, offsets, axis, out_cols, rows0] {
            for (size_t pi = 0; pi < parts.size(); ++pi) {
                const Tensor& p = parts[pi];
                if (!p.impl->requires_grad) continue;
                auto& dst = p.impl->ensure_grad();
                if (axis == 0) {
                    const double* g =
                        self->grad.data() + offsets[pi] * static_cast<size_t>(out_cols);
                    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                } else {
                    const int cols = p.dim(1);
                    for (int r = 0; r < rows0; ++r) {
                        const double* g = self->grad.data() +
                                          static_cast<size_t>(r) * static_cast<size_t>(out_cols) +
                                          offsets[pi];
                        double* d = dst.data() + static_cast<size_t>(r) * cols;
                        for (int c = 0; c < cols; ++c) d[c] += g[c];
                    }
                }
            }
        };
    }
    return node;
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
    if (x.ndim() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
        throw ShapeError("slice_rows: bad range");
    const int cols = x.dim(1);
    std::vector<double> v(static_cast<size_t>(r1 - r0) * cols);
    std::copy(x.data() + static_cast<size_t>(r0) * cols, x.data() + static_cast<size_t>(r1) * cols,
              v.begin());
    return detail::make_node({r1 - r0, cols}, std::move(v), {x}, [x, r0, cols](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            double* d = dst.data() + static_cast<size_t>(r0) * cols;
            for (size_t i = 0; i < self->grad.size(); ++i) d[i] += self->grad[i];
        }
    });
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: bad range");
    const int rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
    std::vector<double> v(static_cast<size_t>(rows) * w);
    for (int r = 0; r < rows; ++r)
        std::copy(x.data() + static_cast<size_t>(r) * cols + c0,
                  x.data() + static_cast<size_t>(r) * cols + c1,
                  v.begin() + static_cast<long>(static_cast<size_t>(r) * static_cast<size_t>(w)));
    return detail::make_node({rows, w}, std::move(v), {x},
                             [x, c0, rows, cols, w](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dst = x.impl->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const double* g = self->grad.data() + static_cast<size_t>(r) * w;
                double* d = dst.data() + static_cast<size_t>(r) * cols + c0;
                for (int c = 0; c < w; ++c) d[c] += g[c];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: shape mismatch");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a.data()[static_cast<size_t>(i) * k + p];
            const double* br = b.data() + static_cast<size_t>(p) * n;
            double* vr = v.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) vr[j] += av * br[j];
        }
    return detail::make_node({m, n}, std::move(v), {a, b}, [a, b, m, k, n](TensorImpl* self) {
        const double* g = self->grad.data();
        if (a.impl->requires_grad) {
            auto& da = a.impl->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<size_t>(i) * n + j];
                    const double* br = b.data() + j;  // column j
                    double* dar = da.data() + static_cast<size_t>(i) * k;
                    for (int p = 0; p < k; ++p) dar[p] += gv * br[static_cast<size_t>(p) * n];
                }
        }
        if (b.impl->requires_grad) {
            auto& db = b.impl->ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const double av = a.data()[static_cast<size_t>(i) * k + p];
                    const double* gr = g + static_cast<size_t>(i) * n;
                    double* dbr = db.data() + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) dbr[j] += av * gr[j];
                }
        }
    });
}

// A (m x k) * B^T (n x k) -> (m x n); avoids materializing transposes.
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("matmul_bt: shape mismatch");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const double* ar = a.data() + static_cast<size_t>(i) * k;
            const double* br = b.data() + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ar[p] * br[p];
            v[static_cast<size_t>(i) * n + j] = s;
        }
    return detail::make_node({m, n}, std::move(v), {a, b}, [a, b, m, k, n](TensorImpl* self) {
        const double* g = self->grad.data();
        if (a.impl->requires_grad) {
            auto& da = a.impl->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<size_t>(i) * n + j];
                    const double* br = b.data() + static_cast<size_t>(j) * k;
                    double* dar = da.data() + static_cast<size_t>(i) * k;
                    for (int p = 0; p < k; ++p) dar[p] += gv * br[p];
                }
        }
        if (b.impl->requires_grad) {
            auto& db = b.impl->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<size_t>(i) * n + j];
                    const double* ar = a.data() + static_cast<size_t>(i) * k;
                    double* dbr = db.data() + static_cast<size_t>(j) * k;
                    for (int p = 0; p < k; ++p) dbr[p] += gv * ar[p];
                }
        }
    });
}

// W (m x n) * x (n) + b (m) -> (m)
inline Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
    if (w.ndim() != 2 || x.ndim() != 1 || b.ndim() != 1 || w.dim(1) != x.dim(0) ||
        w.dim(0) != b.dim(0))
        throw ShapeError("linear: shape mismatch");
    const int m = w.dim(0), n = w.dim(1);
    std::vector<double> v(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* wr = w.data() + static_cast<size_t>(i) * n;
        double s = b.data()[i];
        for (int j = 0; j < n; ++j) s += wr[j] * x.data()[j];
        v[static_cast<size_t>(i)] = s;
    }
    return detail::make_node({m}, std::move(v), {w, x, b}, [w, x, b, m, n](TensorImpl* self) {
        const double* g = self->grad.data();
        if (w.impl->requires_grad) {
            auto& dw = w.impl->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dw[static_cast<size_t>(i) * n + j] += g[i] * x.data()[j];
        }
        if (x.impl->requires_grad) {
            auto& dx = x.impl->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* wr = w.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dx[static_cast<size_t>(j)] += g[i] * wr[j];
            }
        }
        if (b.impl->requires_grad) {
            auto& db = b.impl->ensure_grad();
            for (int i = 0; i < m; ++i) db[static_cast<size_t>(i)] += g[i];
        }
    });
}

// X (r x c) + b (r), bias broadcast along columns.
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(0) != b.dim(0))
        throw ShapeError("add_row_bias: shape mismatch");
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> v(x.numel());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            v[static_cast<size_t>(r) * cols + c] = x.at(r, c) + b.data()[r];
    return detail::make_node({rows, cols}, std::move(v), {x, b},
                             [x, b, rows, cols](TensorImpl* self) {
        detail::accumulate(x.impl, self->grad.data(), self->grad.size());
        if (b.impl->requires_grad) {
            auto& db = b.impl->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const double* g = self->grad.data() + static_cast<size_t>(r) * cols;
                double s = 0.0;
                for (int c = 0; c < cols; ++c) s += g[c];
                db[static_cast<size_t>(r)] += s;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Softmax along `axis` of a 1D or 2D tensor. Each slice normalizes to sum 1.
inline Tensor softmax(const Tensor& x, int axis = 0) {
    if (x.ndim() == 1) axis = 0;
    if (axis < 0 || axis >= x.ndim()) throw ShapeError("softmax: bad axis");

    const int rows = x.ndim() == 2 ? x.dim(0) : 1;
    const int cols = x.ndim() == 2 ? x.dim(1) : x.dim(0);
    const bool along_cols = (x.ndim() == 1) || axis == 1;  // normalize within each row
    std::vector<double> v(x.numel());
    const int n_slices = along_cols ? rows : cols;
    const int slice_len = along_cols ? cols : rows;
    auto idx = [along_cols, cols](int s, int i) {
        return along_cols ? static_cast<size_t>(s) * cols + i : static_cast<size_t>(i) * cols + s;
    };
    for (int s = 0; s < n_slices; ++s) {
        double m = -1e300;
        for (int i = 0; i < slice_len; ++i) m = std::max(m, x.data()[idx(s, i)]);
        double z = 0.0;
        for (int i = 0; i < slice_len; ++i) {
            const double e = std::exp(x.data()[idx(s, i)] - m);
            v[idx(s, i)] = e;
            z += e;
        }
        for (int i = 0; i < slice_len; ++i) v[idx(s, i)] /= z;
    }
    return detail::make_node(x.shape(), std::move(v), {x},
                             [x, n_slices, slice_len, idx](TensorImpl* self) {
        if (!x.impl->requires_grad) return;
        auto& dx = x.impl->ensure_grad();
        for (int s = 0; s < n_slices; ++s) {
            double gy = 0.0;
            for (int i = 0; i < slice_len; ++i)
                gy += self->grad[idx(s, i)] * self->values[idx(s, i)];
            for (int i = 0; i < slice_len; ++i) {
                const double y = self->values[idx(s, i)];
                dx[idx(s, i)] += y * (self->grad[idx(s, i)] - gy);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// sequence ops
// ---------------------------------------------------------------------------

// Same-length 1D convolution with symmetric zero padding and odd kernels.
// x: C_in x L, w: C_out x C_in x k, b: C_out, output C_out x L.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int dilation = 1) {
    if (x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1)
        throw ShapeError("conv1d: bad ranks");
    const int c_in = x.dim(0), L = x.dim(1);
    const int c_out = w.dim(0), k = w.dim(2);
    if (w.dim(1) != c_in || b.dim(0) != c_out) throw ShapeError("conv1d: shape mismatch");
    if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
    if (dilation < 1) throw ShapeError("conv1d: dilation must be >= 1");
    const int half = (k - 1) / 2;

    std::vector<double> v(static_cast<size_t>(c_out) * L);
    for (int co = 0; co < c_out; ++co) {
        double* out_row = v.data() + static_cast<size_t>(co) * L;
        std::fill(out_row, out_row + L, b.data()[co]);
        for (int ci = 0; ci < c_in; ++ci) {
            const double* in_row = x.data() + static_cast<size_t>(ci) * L;
            const double* w_row =
                w.data() + (static_cast<size_t>(co) * c_in + static_cast<size_t>(ci)) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double wv = w_row[kk];
                if (wv == 0.0) continue;
                const int off = (kk - half) * dilation;
                const int t0 = std::max(0, -off), t1 = std::min(L, L - off);
                for (int t = t0; t < t1; ++t) out_row[t] += wv * in_row[t + off];
            }
        }
    }
    return detail::make_node({c_out, L}, std::move(v), {x, w, b},
                             [x, w, b, c_in, c_out, L, k, half, dilation](TensorImpl* self) {
        const double* g = self->grad.data();
        if (x.impl->requires_grad) {
            auto& dx = x.impl->ensure_grad();
            for (int co = 0; co < c_out; ++co) {
                const double* g_row = g + static_cast<size_t>(co) * L;
                for (int ci = 0; ci < c_in; ++ci) {
                    double* dx_row = dx.data() + static_cast<size_t>(ci) * L;
                    const double* w_row =
                        w.data() + (static_cast<size_t>(co) * c_in + static_cast<size_t>(ci)) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double wv = w_row[kk];
                        if (wv == 0.0) continue;
                        const int off = (kk - half) * dilation;
                        const int t0 = std::max(0, -off), t1 = std::min(L, L - off);
                        for (int t = t0; t < t1; ++t) dx_row[t + off] += wv * g_row[t];
                    }
                }
            }
        }
        if (w.impl->requires_grad) {
            auto& dw = w.impl->ensure_grad();
            for (int co = 0; co < c_out; ++co) {
                const double* g_row = g + static_cast<size_t>(co) * L;
                for (int ci = 0; ci < c_in; ++ci) {
                    const double* in_row = x.data() + static_cast<size_t>(ci) * L;
                    double* dw_row =
                        dw.data() + (static_cast<size_t>(co) * c_in + static_cast<size_t>(ci)) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const int off = (kk - half) * dilation;
                        const int t0 = std::max(0, -off), t1 = std::min(L, L - off);
                        double s = 0.0;
                        for (int t = t0; t < t1; ++t) s += g_row[t] * in_row[t + off];
                        dw_row[kk] += s;
                    }
                }
            }
        }
        if (b.impl->requires_grad) {
            auto& db = b.impl->ensure_grad();
            for (int co = 0; co < c_out; ++co) {
                const double* g_row = g + static_cast<size_t>(co) * L;
                double s = 0.0;
                for (int t = 0; t < L; ++t) s += g_row[t];
                db[static_cast<size_t>(co)] += s;
            }
        }
    });
}

struct MaxPoolResult {
    Tensor values;              // C x (L - k + 1)
    std::vector<int> indices;   // source time index per (channel, window); ties -> smallest
};

// Sliding-window maxima with stride 1; backward routes gradient only to the
// argmax positions.
inline MaxPoolResult maxpool1d(const Tensor& x, int k) {
    if (x.ndim() != 2) throw ShapeError("maxpool1d: expected 2D input");
    const int C = x.dim(0), L = x.dim(1);
    if (k < 1 || L < k) throw ShapeError("maxpool1d: window larger than sequence");
    const int out_len = L - k + 1;

    std::vector<double> v(static_cast<size_t>(C) * out_len);
    auto indices = std::make_shared<std::vector<int>>(static_cast<size_t>(C) * out_len);
    for (int c = 0; c < C; ++c) {
        const double* row = x.data() + static_cast<size_t>(c) * L;
        for (int j = 0; j < out_len; ++j) {
            int best = j;
            for (int i = j + 1; i < j + k; ++i)
                if (row[i] > row[best]) best = i;
            v[static_cast<size_t>(c) * out_len + j] = row[best];
            (*indices)[static_cast<size_t>(c) * out_len + j] = best;
        }
    }
    Tensor out = detail::make_node({C, out_len}, std::move(v), {x},
                                   [x, indices, C, L, out_len](TensorImpl* self) {
        if (!x.impl->requires_grad) return;
        auto& dx = x.impl->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int j = 0; j < out_len; ++j) {
                const size_t at = static_cast<size_t>(c) * out_len + j;
                dx[static_cast<size_t>(c) * L + (*indices)[at]] += self->grad[at];
            }
    });
    return {out, *indices};
}

// Unrolled LSTM over a C x L sequence; returns the hidden states H x L.
// Weights pack the input/forget/cell/output gates in that order. Initial
// hidden and cell states are zero.
inline Tensor lstm(const Tensor& x, const Tensor& wx, const Tensor& wh, const Tensor& b) {
    if (x.ndim() != 2 || wx.ndim() != 2 || wh.ndim() != 2 || b.ndim() != 1)
        throw ShapeError("lstm: bad ranks");
    const int C = x.dim(0), L = x.dim(1);
    const int H4 = wx.dim(0), H = H4 / 4;
    if (H4 % 4 != 0 || wx.dim(1) != C || wh.dim(0) != H4 || wh.dim(1) != H || b.dim(0) != H4)
        throw ShapeError("lstm: shape mismatch");

    struct Ctx {
        std::vector<double> gates;   // 4H x L, post-activation (i, f, g, o)
        std::vector<double> cells;   // H x L
        std::vector<double> hidden;  // H x L
    };
    auto ctx = std::make_shared<Ctx>();
    ctx->gates.assign(static_cast<size_t>(H4) * L, 0.0);
    ctx->cells.assign(static_cast<size_t>(H) * L, 0.0);
    ctx->hidden.assign(static_cast<size_t>(H) * L, 0.0);

    std::vector<double> pre(static_cast<size_t>(H4));
    for (int t = 0; t < L; ++t) {
        for (int r = 0; r < H4; ++r) {
            double s = b.data()[r];
            const double* wxr = wx.data() + static_cast<size_t>(r) * C;
            for (int c = 0; c < C; ++c) s += wxr[c] * x.data()[static_cast<size_t>(c) * L + t];
            if (t > 0) {
                const double* whr = wh.data() + static_cast<size_t>(r) * H;
                for (int h = 0; h < H; ++h)
                    s += whr[h] * ctx->hidden[static_cast<size_t>(h) * L + (t - 1)];
            }
            pre[static_cast<size_t>(r)] = s;
        }
        for (int h = 0; h < H; ++h) {
            const double i_g = 1.0 / (1.0 + std::exp(-pre[static_cast<size_t>(h)]));
            const double f_g = 1.0 / (1.0 + std::exp(-pre[static_cast<size_t>(H + h)]));
            const double g_g = std::tanh(pre[static_cast<size_t>(2 * H + h)]);
            const double o_g = 1.0 / (1.0 + std::exp(-pre[static_cast<size_t>(3 * H + h)]));
            const double c_prev = t > 0 ? ctx->cells[static_cast<size_t>(h) * L + (t - 1)] : 0.0;
            const double c_t = f_g * c_prev + i_g * g_g;
            ctx->gates[static_cast<size_t>(h) * L + t] = i_g;
            ctx->gates[static_cast<size_t>(H + h) * L + t] = f_g;
            ctx->gates[static_cast<size_t>(2 * H + h) * L + t] = g_g;
            ctx->gates[static_cast<size_t>(3 * H + h) * L + t] = o_g;
            ctx->cells[static_cast<size_t>(h) * L + t] = c_t;
            ctx->hidden[static_cast<size_t>(h) * L + t] = o_g * std::tanh(c_t);
        }
    }

    std::vector<double> out(ctx->hidden);
    return detail::make_node({H, L}, std::move(out), {x, wx, wh, b},
                             [x, wx, wh, b, ctx, C, L, H, H4](TensorImpl* self) {
        std::vector<double> dh(static_cast<size_t>(H), 0.0);   // running dL/dh_t
        std::vector<double> dc(static_cast<size_t>(H), 0.0);   // running dL/dc_t
        std::vector<double> dgates(static_cast<size_t>(H4), 0.0);  // pre-activation grads

        const bool need_x = x.impl->requires_grad;
        const bool need_wx = wx.impl->requires_grad;
        const bool need_wh = wh.impl->requires_grad;
        const bool need_b = b.impl->requires_grad;
        auto* dx = need_x ? &x.impl->ensure_grad() : nullptr;
        auto* dwx = need_wx ? &wx.impl->ensure_grad() : nullptr;
        auto* dwh = need_wh ? &wh.impl->ensure_grad() : nullptr;
        auto* db = need_b ? &b.impl->ensure_grad() : nullptr;

        for (int t = L - 1; t >= 0; --t) {
            for (int h = 0; h < H; ++h) {
                dh[static_cast<size_t>(h)] += self->grad[static_cast<size_t>(h) * L + t];
                const double i_g = ctx->gates[static_cast<size_t>(h) * L + t];
                const double f_g = ctx->gates[static_cast<size_t>(H + h) * L + t];
                const double g_g = ctx->gates[static_cast<size_t>(2 * H + h) * L + t];
                const double o_g = ctx->gates[static_cast<size_t>(3 * H + h) * L + t];
                const double c_t = ctx->cells[static_cast<size_t>(h) * L + t];
                const double tc = std::tanh(c_t);
                const double c_prev =
                    t > 0 ? ctx->cells[static_cast<size_t>(h) * L + (t - 1)] : 0.0;

                const double do_g = dh[static_cast<size_t>(h)] * tc;
                dc[static_cast<size_t>(h)] += dh[static_cast<size_t>(h)] * o_g * (1.0 - tc * tc);
                const double di_g = dc[static_cast<size_t>(h)] * g_g;
                const double df_g = dc[static_cast<size_t>(h)] * c_prev;
                const double dg_g = dc[static_cast<size_t>(h)] * i_g;

                dgates[static_cast<size_t>(h)] = di_g * i_g * (1.0 - i_g);
                dgates[static_cast<size_t>(H + h)] = df_g * f_g * (1.0 - f_g);
                dgates[static_cast<size_t>(2 * H + h)] = dg_g * (1.0 - g_g * g_g);
                dgates[static_cast<size_t>(3 * H + h)] = do_g * o_g * (1.0 - o_g);

                dc[static_cast<size_t>(h)] *= f_g;  // flows to c_{t-1}
                dh[static_cast<size_t>(h)] = 0.0;   // rebuilt below from W_h
            }
            for (int r = 0; r < H4; ++r) {
                const double g = dgates[static_cast<size_t>(r)];
                if (g == 0.0) continue;
                if (need_b) (*db)[static_cast<size_t>(r)] += g;
                if (need_wx || need_x) {
                    const double* wxr = wx.data() + static_cast<size_t>(r) * C;
                    for (int c = 0; c < C; ++c) {
                        const size_t xi = static_cast<size_t>(c) * L + t;
                        if (need_wx)
                            (*dwx)[static_cast<size_t>(r) * C + c] += g * x.data()[xi];
                        if (need_x) (*dx)[xi] += g * wxr[c];
                    }
                }
                if (t > 0) {
                    const double* whr = wh.data() + static_cast<size_t>(r) * H;
                    for (int h = 0; h < H; ++h) {
                        const double h_prev = ctx->hidden[static_cast<size_t>(h) * L + (t - 1)];
                        if (need_wh) (*dwh)[static_cast<size_t>(r) * H + h] += g * h_prev;
                        dh[static_cast<size_t>(h)] += g * whr[h];
                    }
                }
            }
        }
    });
}

// Running statistics for batch normalization; updated only in training mode.
struct BnState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BnState(int channels = 0)
        : running_mean(static_cast<size_t>(channels), 0.0),
          running_var(static_cast<size_t>(channels), 1.0) {}
};

// Per-channel batch normalization of a C x L sequence over its time axis.
// Training mode normalizes with batch statistics and updates the running
// estimates with momentum 0.9; eval mode normalizes with the running stats.
inline Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BnState& state, bool training, double momentum = 0.9,
                          double eps = 1e-5) {
    if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1)
        throw ShapeError("batchnorm1d: bad ranks");
    const int C = x.dim(0), L = x.dim(1);
    if (gamma.dim(0) != C || beta.dim(0) != C ||
        state.running_mean.size() != static_cast<size_t>(C))
        throw ShapeError("batchnorm1d: shape mismatch");

    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
    auto inv_sd = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
    std::vector<double> v(x.numel());

    for (int c = 0; c < C; ++c) {
        const double* row = x.data() + static_cast<size_t>(c) * L;
        double m, var;
        if (training) {
            m = 0.0;
            for (int t = 0; t < L; ++t) m += row[t];
            m /= L;
            var = 0.0;
            for (int t = 0; t < L; ++t) var += (row[t] - m) * (row[t] - m);
            var /= L;
            state.running_mean[static_cast<size_t>(c)] =
                momentum * state.running_mean[static_cast<size_t>(c)] + (1.0 - momentum) * m;
            state.running_var[static_cast<size_t>(c)] =
                momentum * state.running_var[static_cast<size_t>(c)] + (1.0 - momentum) * var;
        } else {
            m = state.running_mean[static_cast<size_t>(c)];
            var = state.running_var[static_cast<size_t>(c)];
        }
        (*mean)[static_cast<size_t>(c)] = m;
        (*inv_sd)[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps);
        const double g = gamma.data()[c], bta = beta.data()[c];
        double* out_row = v.data() + static_cast<size_t>(c) * L;
        for (int t = 0; t < L; ++t)
            out_row[t] = (row[t] - m) * (*inv_sd)[static_cast<size_t>(c)] * g + bta;
    }
    return detail::make_node({C, L}, std::move(v), {x, gamma, beta},
                             [x, gamma, beta, mean, inv_sd, training, C, L](TensorImpl* self) {
        for (int c = 0; c < C; ++c) {
            const double* g_row = self->grad.data() + static_cast<size_t>(c) * L;
            const double* x_row = x.data() + static_cast<size_t>(c) * L;
            const double m = (*mean)[static_cast<size_t>(c)];
            const double isd = (*inv_sd)[static_cast<size_t>(c)];
            const double gam = gamma.data()[c];

            if (gamma.impl->requires_grad || beta.impl->requires_grad) {
                double dg = 0.0, dbta = 0.0;
                for (int t = 0; t < L; ++t) {
                    dg += g_row[t] * (x_row[t] - m) * isd;
                    dbta += g_row[t];
                }
                if (gamma.impl->requires_grad)
                    gamma.impl->ensure_grad()[static_cast<size_t>(c)] += dg;
                if (beta.impl->requires_grad)
                    beta.impl->ensure_grad()[static_cast<size_t>(c)] += dbta;
            }
            if (x.impl->requires_grad) {
                auto& dx = x.impl->ensure_grad();
                double* dx_row = dx.data() + static_cast<size_t>(c) * L;
                if (training) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int t = 0; t < L; ++t) {
                        sum_g += g_row[t];
                        sum_gx += g_row[t] * (x_row[t] - m) * isd;
                    }
                    for (int t = 0; t < L; ++t) {
                        const double xh = (x_row[t] - m) * isd;
                        dx_row[t] += gam * isd * (g_row[t] - sum_g / L - xh * sum_gx / L);
                    }
                } else {
                    for (int t = 0; t < L; ++t) dx_row[t] += gam * isd * g_row[t];
                }
            }
        }
    });
}

// Mean over the time axis of a C x L sequence -> C.
inline Tensor time_mean(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("time_mean: expected 2D input");
    const int C = x.dim(0), L = x.dim(1);
    std::vector<double> v(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        const double* row = x.data() + static_cast<size_t>(c) * L;
        double s = 0.0;
        for (int t = 0; t < L; ++t) s += row[t];
        v[static_cast<size_t>(c)] = s / L;
    }
    return detail::make_node({C}, std::move(v), {x}, [x, C, L](TensorImpl* self) {
        if (!x.impl->requires_grad) return;
        auto& dx = x.impl->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const double g = self->grad[static_cast<size_t>(c)] / L;
            double* row = dx.data() + static_cast<size_t>(c) * L;
            for (int t = 0; t < L; ++t) row[t] += g;
        }
    });
}

// Per-channel scaling: out[c][t] = x[c][t] * a[c].
inline Tensor mul_channels(const Tensor& x, const Tensor& a) {
    if (x.ndim() != 2 || a.ndim() != 1 || a.dim(0) != x.dim(0))
        throw ShapeError("mul_channels: shape mismatch");
    const int C = x.dim(0), L = x.dim(1);
    std::vector<double> v(x.numel());
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < L; ++t)
            v[static_cast<size_t>(c) * L + t] = x.at(c, t) * a.data()[c];
    return detail::make_node({C, L}, std::move(v), {x, a}, [x, a, C, L](TensorImpl* self) {
        if (x.impl->requires_grad) {
            auto& dx = x.impl->ensure_grad();
            for (int c = 0; c < C; ++c) {
                const double av = a.data()[c];
                for (int t = 0; t < L; ++t)
                    dx[static_cast<size_t>(c) * L + t] +=
                        self->grad[static_cast<size_t>(c) * L + t] * av;
            }
        }
        if (a.impl->requires_grad) {
            auto& da = a.impl->ensure_grad();
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int t = 0; t < L; ++t)
                    s += self->grad[static_cast<size_t>(c) * L + t] * x.at(c, t);
                da[static_cast<size_t>(c)] += s;
            }
        }
    });
}

// Constant per-time-step mask broadcast over channels.
inline Tensor mul_time_mask(const Tensor& x, std::vector<double> mask) {
    if (x.ndim() != 2 || static_cast<int>(mask.size()) != x.dim(1))
        throw ShapeError("mul_time_mask: shape mismatch");
    const int C = x.dim(0), L = x.dim(1);
    std::vector<double> v(x.numel());
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < L; ++t)
            v[static_cast<size_t>(c) * L + t] = x.at(c, t) * mask[static_cast<size_t>(t)];
    return detail::make_node({C, L}, std::move(v), {x},
                             [x, mask = std::move(mask), C, L](TensorImpl* self) {
        if (!x.impl->requires_grad) return;
        auto& dx = x.impl->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < L; ++t)
                dx[static_cast<size_t>(c) * L + t] +=
                    self->grad[static_cast<size_t>(c) * L + t] * mask[static_cast<size_t>(t)];
    });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Accumulates dLoss/dParam into every
// reachable leaf with requires_grad, then frees the tape; the graph cannot be
// replayed without rebuilding the forward pass.
inline void backward(const Tensor& loss) {
    if (!loss.defined()) throw NotScalarError("backward: undefined tensor");
    if (loss.numel() != 1) throw NotScalarError("backward: loss must be scalar");
    if (loss.impl->backward_done)
        throw GraphConsumedError("backward: graph already consumed; rebuild the forward pass");

    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(loss.impl.get(), 0);
    visited.insert(loss.impl.get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            TensorImpl* next = node->parents[child++].get();
            if (visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.impl->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && node->requires_grad) {
            node->ensure_grad();
            node->backward_fn();
        }
    }
    loss.impl->backward_done = true;
    for (TensorImpl* node : order) {
        node->backward_fn = nullptr;
        node->parents.clear();
    }
}

// Global L2 norm of the gradients of a parameter set.
inline double grad_norm(const std::vector<Tensor*>& params) {
    double s = 0.0;
    for (Tensor* p : params)
        for (double g : p->grad()) s += g * g;
    return std::sqrt(s);
}

}  // namespace pavenet
