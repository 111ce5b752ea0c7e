#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "caplab/kernels.hpp"
#include "caplab/tensor.hpp"

// Differentiable operations over TensorT. Forward math runs through the
// kernels layer where a data-parallel loop exists; backward closures stay on
// the graph nodes. Reductions accumulate in double.

namespace caplab::ops {

namespace detail {

template <typename T>
inline bool track2(const TensorT<T>& a, const TensorT<T>& b) {
    return grad_enabled() && (a.requires_grad() || b.requires_grad());
}

template <typename T>
inline bool track1(const TensorT<T>& a) {
    return grad_enabled() && a.requires_grad();
}

template <typename T>
inline TensorT<T> out_like(std::vector<int> shape, bool rg, const char* op) {
    auto t = TensorT<T>::zeros(std::move(shape), rg);
    t.node()->op = op;
    return t;
}

template <typename T>
inline void require_rank(const TensorT<T>& t, int r, const char* op) {
    if (t.rank() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto out = detail::out_like<T>(a.shape(), detail::track2(a, b), "add");
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        out.node()->parents = {a.node(), b.node()};
        out.node()->backward = [](NodeT<T>& o) {
            for (int p = 0; p < 2; ++p) {
                auto& par = *o.parents[size_t(p)];
                if (!par.requires_grad) continue;
                par.ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) par.grad[i] += o.grad[i];
            }
        };
    }
    return out;
}

// y[i,j] = a[i,j] + v[j]
template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& a, const TensorT<T>& v) {
    detail::require_rank(a, 2, "add_rowvec");
    const int m = a.dim(0), n = a.dim(1);
    if (int(v.numel()) != n)
        throw ShapeError("add_rowvec: vector length " + std::to_string(v.numel()) +
                         " vs row width " + std::to_string(n));
    auto out = detail::out_like<T>(a.shape(), detail::track2(a, v), "add_rowvec");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + v.data()[j];
    if (out.requires_grad()) {
        out.node()->parents = {a.node(), v.node()};
        out.node()->backward = [m, n](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            auto& pv = *o.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
            }
            if (pv.requires_grad) {
                pv.ensure_grad();
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += double(o.grad[size_t(i) * n + j]);
                    pv.grad[size_t(j)] += T(acc);
                }
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto out = detail::out_like<T>(a.shape(), detail::track2(a, b), "mul");
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        out.node()->parents = {a.node(), b.node()};
        out.node()->backward = [](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            auto& pb = *o.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.value[i];
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, double c) {
    auto out = detail::out_like<T>(a.shape(), detail::track1(a), "scale");
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = T(double(a.data()[i]) * c);
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        out.node()->backward = [c](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += T(double(o.grad[i]) * c);
        };
    }
    return out;
}

// Multiply every element by a trainable scalar (a [1] tensor).
template <typename T>
TensorT<T> scale_by(const TensorT<T>& a, const TensorT<T>& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: scalar tensor expected");
    auto out = detail::out_like<T>(a.shape(), detail::track2(a, s), "scale_by");
    const T sv = s.data()[0];
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * sv;
    if (out.requires_grad()) {
        out.node()->parents = {a.node(), s.node()};
        out.node()->backward = [](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            auto& ps = *o.parents[1];
            const T sv2 = ps.value[0];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * sv2;
            }
            if (ps.requires_grad) {
                ps.ensure_grad();
                double acc = 0.0;
                for (size_t i = 0; i < o.grad.size(); ++i)
                    acc += double(o.grad[i]) * double(pa.value[i]);
                ps.grad[0] += T(acc);
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> exp_t(const TensorT<T>& a) {
    auto out = detail::out_like<T>(a.shape(), detail::track1(a), "exp");
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = T(std::exp(double(a.data()[i])));
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        out.node()->backward = [](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * o.value[i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> reciprocal(const TensorT<T>& a) {
    auto out = detail::out_like<T>(a.shape(), detail::track1(a), "reciprocal");
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = T(1.0 / double(a.data()[i]));
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        out.node()->backward = [](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                const double v = double(o.value[i]);
                pa.grad[i] += T(-double(o.grad[i]) * v * v);
            }
        };
    }
    return out;
}

// Gradient passes only where lo <= x <= hi.
template <typename T>
TensorT<T> clamp(const TensorT<T>& a, double lo, double hi) {
    auto out = detail::out_like<T>(a.shape(), detail::track1(a), "clamp");
    for (size_t i = 0; i < a.numel(); ++i) {
        double v = double(a.data()[i]);
        out.data()[i] = T(v < lo ? lo : (v > hi ? hi : v));
    }
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        out.node()->backward = [lo, hi](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                const double v = double(pa.value[i]);
                if (v >= lo && v <= hi) pa.grad[i] += o.grad[i];
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
    auto out = detail::out_like<T>(a.shape(), detail::track1(a), "gelu");
    kernels::gelu(a.data(), out.data(), a.numel());
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        out.node()->backward = [](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            constexpr double kInvSqrt2 = 0.70710678118654752440;
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            for (size_t i = 0; i < o.grad.size(); ++i) {
                const double x = double(pa.value[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                pa.grad[i] += T(double(o.grad[i]) * (cdf + x * pdf));
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul / transpose
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::out_like<T>({m, n}, detail::track2(a, b), "matmul");
    kernels::matmul(a.data(), b.data(), out.data(), m, k, n);
    if (out.requires_grad()) {
        out.node()->parents = {a.node(), b.node()};
        out.node()->backward = [m, k, n](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            auto& pb = *o.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                std::vector<T> da(size_t(m) * k);
                kernels::matmul_nt(o.grad.data(), pb.value.data(), da.data(), m, n, k);
                for (size_t i = 0; i < da.size(); ++i) pa.grad[i] += da[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                std::vector<T> db(size_t(k) * n);
                kernels::matmul_tn(pa.value.data(), o.grad.data(), db.data(), m, k, n);
                for (size_t i = 0; i < db.size(); ++i) pb.grad[i] += db[i];
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
    detail::require_rank(a, 2, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    auto out = detail::out_like<T>({n, m}, detail::track1(a), "transpose");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        out.node()->backward = [m, n](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    pa.grad[size_t(i) * n + j] += o.grad[size_t(j) * m + i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / losses / normalization
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    const int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ValueError("softmax: axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(r));
    int outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
    const int L = a.dim(axis);
    auto out = detail::out_like<T>(a.shape(), detail::track1(a), "softmax");
    kernels::softmax_lanes(a.data(), out.data(), outer * inner, L, inner);
    if (out.requires_grad()) {
        out.node()->parents = {a.node()};
        const int slices = outer * inner;
        out.node()->backward = [slices, L, inner](NodeT<T>& o) {
            auto& pa = *o.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            std::vector<T> dx(o.value.size());
            kernels::softmax_lanes_backward(o.value.data(), o.grad.data(), dx.data(), slices, L,
                                            inner);
            for (size_t i = 0; i < dx.size(); ++i) pa.grad[i] += dx[i];
        };
    }
    return out;
}

namespace detail {

// Shared core for mean/sum cross entropy. Returns the scalar tensor; sets
// *count_out to the number of non-ignored targets.
template <typename T>
TensorT<T> cross_entropy_impl(const TensorT<T>& logits, const std::vector<int>& targets,
                              int ignore_index, bool mean_reduce, int* count_out) {
    require_rank(logits, 2, "cross_entropy");
    const int n = logits.dim(0), V = logits.dim(1);
    if (int(targets.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    int count = 0;
    for (int i = 0; i < n; ++i) {
        if (targets[size_t(i)] == ignore_index) continue;
        if (targets[size_t(i)] < 0 || targets[size_t(i)] >= V)
            throw IndexError("cross_entropy: target " + std::to_string(targets[size_t(i)]) +
                             " out of range [0," + std::to_string(V) + ") at row " +
                             std::to_string(i));
        ++count;
    }
    if (count_out) *count_out = count;
    auto out = detail::out_like<T>({1}, track1(logits), "cross_entropy");
    // Reductions run in sorted-value order so the loss is invariant to row and
    // column permutations bit for bit, not just up to rounding.
    std::vector<double> row_losses;
    std::vector<double> terms(static_cast<size_t>(V));
    for (int i = 0; i < n; ++i) {
        if (targets[size_t(i)] == ignore_index) continue;
        const T* row = logits.data() + size_t(i) * V;
        double mx = -INFINITY;
        for (int j = 0; j < V; ++j) mx = std::max(mx, double(row[j]));
        for (int j = 0; j < V; ++j) terms[size_t(j)] = std::exp(double(row[j]) - mx);
        std::sort(terms.begin(), terms.end());
        double sum = 0.0;
        for (double t : terms) sum += t;
        row_losses.push_back((std::log(sum) + mx) - double(row[targets[size_t(i)]]));
    }
    std::sort(row_losses.begin(), row_losses.end());
    double total = 0.0;
    for (double l : row_losses) total += l;
    const double denom = mean_reduce ? std::max(count, 1) : 1;
    out.data()[0] = T(total / denom);
    if (out.requires_grad()) {
        out.node()->parents = {logits.node()};
        out.node()->backward = [targets, ignore_index, n, V, count, mean_reduce](NodeT<T>& o) {
            auto& pl = *o.parents[0];
            if (!pl.requires_grad) return;
            pl.ensure_grad();
            if (count == 0) return;
            const double g = double(o.grad[0]) / (mean_reduce ? count : 1);
            for (int i = 0; i < n; ++i) {
                if (targets[size_t(i)] == ignore_index) continue;
                const T* row = pl.value.data() + size_t(i) * V;
                double mx = -INFINITY;
                for (int j = 0; j < V; ++j) mx = std::max(mx, double(row[j]));
                double sum = 0.0;
                for (int j = 0; j < V; ++j) sum += std::exp(double(row[j]) - mx);
                T* grow = pl.grad.data() + size_t(i) * V;
                for (int j = 0; j < V; ++j) {
                    const double p = std::exp(double(row[j]) - mx) / sum;
                    const double onehot = (j == targets[size_t(i)]) ? 1.0 : 0.0;
                    grow[j] += T(g * (p - onehot));
                }
            }
        };
    }
    return out;
}

}  // namespace detail

// Mean negative log-softmax probability of targets over non-ignored rows.
// All rows ignored -> 0 with zero gradient.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                         int ignore_index = -1) {
    return detail::cross_entropy_impl(logits, targets, ignore_index, true, nullptr);
}

// Sum-reduced variant for token-weighted batch mixing.
template <typename T>
TensorT<T> cross_entropy_sum(const TensorT<T>& logits, const std::vector<int>& targets,
                             int ignore_index, int* count_out) {
    return detail::cross_entropy_impl(logits, targets, ignore_index, false, count_out);
}

// Per-element sigmoid binary cross entropy, mean-reduced.
template <typename T>
TensorT<T> bce_with_logits(const TensorT<T>& logits, const TensorT<T>& targets) {
    if (logits.shape() != targets.shape())
        throw ShapeError("bce_with_logits: shape mismatch " + shape_str(logits.shape()) + " vs " +
                         shape_str(targets.shape()));
    const size_t n = logits.numel();
    if (n == 0) throw ValueError("bce_with_logits: empty input");
    auto out = detail::out_like<T>({1}, detail::track1(logits), "bce_with_logits");
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double z = double(logits.data()[i]);
        const double y = double(targets.data()[i]);
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    out.data()[0] = T(total / double(n));
    if (out.requires_grad()) {
        out.node()->parents = {logits.node(), targets.node()};
        out.node()->backward = [n](NodeT<T>& o) {
            auto& pl = *o.parents[0];
            auto& pt = *o.parents[1];
            if (!pl.requires_grad) return;
            pl.ensure_grad();
            const double g = double(o.grad[0]) / double(n);
            for (size_t i = 0; i < n; ++i) {
                const double z = double(pl.value[i]);
                const double sig = 1.0 / (1.0 + std::exp(-z));
                pl.grad[i] += T(g * (sig - double(pt.value[i])));
            }
        };
    }
    return out;
}

// Zero-mean unit-variance along the last axis, then affine.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      double eps = 1e-5) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank 0 input");
    const int n = x.dim(x.rank() - 1);
    if (n < 1) throw ShapeError("layer_norm: empty last axis");
    const int rows = int(x.numel() / size_t(n));
    if (int(gain.numel()) != n || int(bias.numel()) != n)
        throw ShapeError("layer_norm: gain/bias length mismatch");
    const bool rg = grad_enabled() &&
                    (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    auto out = detail::out_like<T>(x.shape(), rg, "layer_norm");
    kernels::layer_norm_rows(x.data(), gain.data(), bias.data(), out.data(), rows, n, eps);
    if (out.requires_grad()) {
        out.node()->parents = {x.node(), gain.node(), bias.node()};
        out.node()->backward = [rows, n, eps](NodeT<T>& o) {
            auto& px = *o.parents[0];
            auto& pg = *o.parents[1];
            auto& pb = *o.parents[2];
            if (px.requires_grad) px.ensure_grad();
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const T* xr = px.value.data() + size_t(r) * n;
                const T* dyr = o.grad.data() + size_t(r) * n;
                double mean = 0.0;
                for (int j = 0; j < n; ++j) mean += double(xr[j]);
                mean /= n;
                double var = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double d = double(xr[j]) - mean;
                    var += d * d;
                }
                var /= n;
                const double rstd = 1.0 / std::sqrt(var + eps);
                double mean_dyh = 0.0, mean_dyh_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double xhat = (double(xr[j]) - mean) * rstd;
                    const double dyh = double(dyr[j]) * double(pg.value[size_t(j)]);
                    mean_dyh += dyh;
                    mean_dyh_xhat += dyh * xhat;
                    if (pg.requires_grad) pg.grad[size_t(j)] += T(double(dyr[j]) * xhat);
                    if (pb.requires_grad) pb.grad[size_t(j)] += dyr[j];
                }
                mean_dyh /= n;
                mean_dyh_xhat /= n;
                if (px.requires_grad) {
                    T* dxr = px.grad.data() + size_t(r) * n;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (double(xr[j]) - mean) * rstd;
                        const double dyh = double(dyr[j]) * double(pg.value[size_t(j)]);
                        dxr[j] += T(rstd * (dyh - mean_dyh - xhat * mean_dyh_xhat));
                    }
                }
            }
        };
    }
    return out;
}

// Rows divided by their L2 norm. Zero-norm rows are an error.
template <typename T>
TensorT<T> l2_normalize_rows(const TensorT<T>& x) {
    detail::require_rank(x, 2, "l2_normalize_rows");
    const int m = x.dim(0), n = x.dim(1);
    auto out = detail::out_like<T>(x.shape(), detail::track1(x), "l2_normalize_rows");
    std::vector<double> norms(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            const double v = double(x.at(i, j));
            s += v * v;
        }
        const double nv = std::sqrt(s);
        if (nv == 0.0)
            throw ValueError("l2_normalize_rows: zero-norm row " + std::to_string(i));
        norms[size_t(i)] = nv;
        for (int j = 0; j < n; ++j) out.at(i, j) = T(double(x.at(i, j)) / nv);
    }
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [m, n, norms](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int i = 0; i < m; ++i) {
                const T* yr = o.value.data() + size_t(i) * n;
                const T* dyr = o.grad.data() + size_t(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += double(yr[j]) * double(dyr[j]);
                T* dxr = px.grad.data() + size_t(i) * n;
                for (int j = 0; j < n; ++j)
                    dxr[j] += T((double(dyr[j]) - double(yr[j]) * dot) / norms[size_t(i)]);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather / slicing / concatenation
// ---------------------------------------------------------------------------

// Rows of `table` selected by token id.
template <typename T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& ids) {
    detail::require_rank(table, 2, "embedding");
    const int V = table.dim(0), D = table.dim(1);
    const int n = int(ids.size());
    for (int id : ids)
        if (id < 0 || id >= V)
            throw IndexError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(V) + ")");
    auto out = detail::out_like<T>({n, D}, detail::track1(table), "embedding");
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < D; ++j) out.at(i, j) = table.at(ids[size_t(i)], j);
    if (out.requires_grad()) {
        out.node()->parents = {table.node()};
        out.node()->backward = [ids, D](NodeT<T>& o) {
            auto& pt = *o.parents[0];
            if (!pt.requires_grad) return;
            pt.ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < D; ++j)
                    pt.grad[size_t(ids[i]) * D + j] += o.grad[i * D + size_t(j)];
        };
    }
    return out;
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& x, int r0, int len) {
    detail::require_rank(x, 2, "slice_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (r0 < 0 || len < 0 || r0 + len > m)
        throw IndexError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r0 + len) +
                         ") out of " + std::to_string(m) + " rows");
    auto out = detail::out_like<T>({len, n}, detail::track1(x), "slice_rows");
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(r0 + i, j);
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [r0, len, n](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int i = 0; i < len; ++i)
                for (int j = 0; j < n; ++j)
                    px.grad[size_t(r0 + i) * n + j] += o.grad[size_t(i) * n + j];
        };
    }
    return out;
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& x, int c0, int len) {
    detail::require_rank(x, 2, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    if (c0 < 0 || len < 0 || c0 + len > n)
        throw IndexError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c0 + len) +
                         ") out of " + std::to_string(n) + " cols");
    auto out = detail::out_like<T>({m, len}, detail::track1(x), "slice_cols");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [c0, len, n, m](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j)
                    px.grad[size_t(i) * n + (c0 + j)] += o.grad[size_t(i) * len + j];
        };
    }
    return out;
}

template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& xs) {
    if (xs.empty()) throw ValueError("concat_rows: empty list");
    const int n = xs[0].dim(1);
    int m = 0;
    bool rg = false;
    for (const auto& x : xs) {
        detail::require_rank(x, 2, "concat_rows");
        if (x.dim(1) != n) throw ShapeError("concat_rows: column mismatch");
        m += x.dim(0);
        rg = rg || x.requires_grad();
    }
    auto out = detail::out_like<T>({m, n}, grad_enabled() && rg, "concat_rows");
    int r = 0;
    for (const auto& x : xs) {
        for (int i = 0; i < x.dim(0); ++i)
            for (int j = 0; j < n; ++j) out.at(r + i, j) = x.at(i, j);
        r += x.dim(0);
    }
    if (out.requires_grad()) {
        auto& parents = out.node()->parents;
        for (const auto& x : xs) parents.push_back(x.node());
        out.node()->backward = [n](NodeT<T>& o) {
            int row = 0;
            for (auto& pp : o.parents) {
                auto& p = *pp;
                const int rows = p.shape[0];
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < n; ++j)
                            p.grad[size_t(i) * n + j] += o.grad[size_t(row + i) * n + j];
                }
                row += rows;
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& xs) {
    if (xs.empty()) throw ValueError("concat_cols: empty list");
    const int m = xs[0].dim(0);
    int n = 0;
    bool rg = false;
    for (const auto& x : xs) {
        detail::require_rank(x, 2, "concat_cols");
        if (x.dim(0) != m) throw ShapeError("concat_cols: row mismatch");
        n += x.dim(1);
        rg = rg || x.requires_grad();
    }
    auto out = detail::out_like<T>({m, n}, grad_enabled() && rg, "concat_cols");
    int c = 0;
    for (const auto& x : xs) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < x.dim(1); ++j) out.at(i, c + j) = x.at(i, j);
        c += x.dim(1);
    }
    if (out.requires_grad()) {
        auto& parents = out.node()->parents;
        for (const auto& x : xs) parents.push_back(x.node());
        out.node()->backward = [m, n](NodeT<T>& o) {
            int col = 0;
            for (auto& pp : o.parents) {
                auto& p = *pp;
                const int cols = p.shape[1];
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < cols; ++j)
                            p.grad[size_t(i) * cols + j] += o.grad[size_t(i) * n + (col + j)];
                }
                col += cols;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / masking / resampling along time
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
    auto out = detail::out_like<T>({1}, detail::track1(x), "sum");
    double acc = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) acc += double(x.data()[i]);
    out.data()[0] = T(acc);
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += o.grad[0];
        };
    }
    return out;
}

// Mean over the first `valid` rows -> [1 x n].
template <typename T>
TensorT<T> masked_mean_rows(const TensorT<T>& x, int valid) {
    detail::require_rank(x, 2, "masked_mean_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (valid < 1 || valid > m)
        throw ValueError("masked_mean_rows: valid count " + std::to_string(valid) + " of " +
                         std::to_string(m) + " rows");
    auto out = detail::out_like<T>({1, n}, detail::track1(x), "masked_mean_rows");
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < valid; ++i) acc += double(x.at(i, j));
        out.at(0, j) = T(acc / valid);
    }
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [valid, n](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int i = 0; i < valid; ++i)
                for (int j = 0; j < n; ++j)
                    px.grad[size_t(i) * n + j] += T(double(o.grad[size_t(j)]) / valid);
        };
    }
    return out;
}

// Zero every row at index >= valid.
template <typename T>
TensorT<T> mask_tail_rows(const TensorT<T>& x, int valid) {
    detail::require_rank(x, 2, "mask_tail_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (valid < 0 || valid > m) throw ValueError("mask_tail_rows: bad valid count");
    auto out = detail::out_like<T>(x.shape(), detail::track1(x), "mask_tail_rows");
    for (int i = 0; i < valid; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j);
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [valid, n](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int i = 0; i < valid; ++i)
                for (int j = 0; j < n; ++j)
                    px.grad[size_t(i) * n + j] += o.grad[size_t(i) * n + j];
        };
    }
    return out;
}

// Halve the frame rate by averaging valid members of each frame pair.
// Output has ceil(m/2) rows; rows past ceil(valid/2) are zero.
template <typename T>
TensorT<T> downsample2(const TensorT<T>& x, int valid) {
    detail::require_rank(x, 2, "downsample2");
    const int m = x.dim(0), n = x.dim(1);
    if (valid < 1 || valid > m) throw ValueError("downsample2: bad valid count");
    const int mo = (m + 1) / 2;
    const int vo = (valid + 1) / 2;
    auto out = detail::out_like<T>({mo, n}, detail::track1(x), "downsample2");
    for (int t = 0; t < vo; ++t) {
        const int a = 2 * t, b = 2 * t + 1;
        const int cnt = (b < valid) ? 2 : 1;
        for (int j = 0; j < n; ++j) {
            double acc = double(x.at(a, j));
            if (cnt == 2) acc += double(x.at(b, j));
            out.at(t, j) = T(acc / cnt);
        }
    }
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [valid, vo, n](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int t = 0; t < vo; ++t) {
                const int a = 2 * t, b = 2 * t + 1;
                const int cnt = (b < valid) ? 2 : 1;
                for (int j = 0; j < n; ++j) {
                    const T g = T(double(o.grad[size_t(t) * n + j]) / cnt);
                    px.grad[size_t(a) * n + j] += g;
                    if (cnt == 2) px.grad[size_t(b) * n + j] += g;
                }
            }
        };
    }
    return out;
}

// Double the frame rate by repetition, trimmed to target_len rows.
template <typename T>
TensorT<T> upsample2(const TensorT<T>& x, int target_len) {
    detail::require_rank(x, 2, "upsample2");
    const int m = x.dim(0), n = x.dim(1);
    if (target_len < 1 || target_len > 2 * m)
        throw ValueError("upsample2: target length " + std::to_string(target_len) +
                         " not reachable from " + std::to_string(m) + " frames");
    auto out = detail::out_like<T>({target_len, n}, detail::track1(x), "upsample2");
    for (int t = 0; t < target_len; ++t)
        for (int j = 0; j < n; ++j) out.at(t, j) = x.at(t / 2, j);
    if (out.requires_grad()) {
        out.node()->parents = {x.node()};
        out.node()->backward = [target_len, n](NodeT<T>& o) {
            auto& px = *o.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int t = 0; t < target_len; ++t)
                for (int j = 0; j < n; ++j)
                    px.grad[size_t(t / 2) * n + j] += o.grad[size_t(t) * n + j];
        };
    }
    return out;
}

// Stride-2 temporal convolution, kernel 3, zero pad 1: [T x Cin] -> [ceil(T/2) x Cout].
// Weight layout [3 x Cin x Cout], bias [Cout].
template <typename T>
TensorT<T> conv1d_k3s2(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    detail::require_rank(x, 2, "conv1d_k3s2");
    const int Tn = x.dim(0), ci = x.dim(1);
    if (w.rank() != 3 || w.dim(0) != 3 || w.dim(1) != ci)
        throw ShapeError("conv1d_k3s2: weight shape " + shape_str(w.shape()) + " vs input " +
                         shape_str(x.shape()));
    const int co = w.dim(2);
    if (int(b.numel()) != co) throw ShapeError("conv1d_k3s2: bias length mismatch");
    const int To = (Tn + 1) / 2;
    const bool rg = grad_enabled() &&
                    (x.requires_grad() || w.requires_grad() || b.requires_grad());
    auto out = detail::out_like<T>({To, co}, rg, "conv1d_k3s2");
    const T* xd = x.data();
    const T* wd = w.data();
    const T* bd = b.data();
    T* od = out.data();
#pragma omp parallel for schedule(static) num_threads(kernels::threads()) if (size_t(To) * ci * co > 16384 && kernels::threads() > 1)
    for (int t = 0; t < To; ++t) {
        for (int o = 0; o < co; ++o) {
            double acc = double(bd[o]);
            for (int dt = 0; dt < 3; ++dt) {
                const int src = 2 * t - 1 + dt;
                if (src < 0 || src >= Tn) continue;
                const T* xr = xd + size_t(src) * ci;
                const T* wr = wd + (size_t(dt) * ci) * co;
                for (int c = 0; c < ci; ++c) acc += double(xr[c]) * double(wr[size_t(c) * co + o]);
            }
            od[size_t(t) * co + o] = T(acc);
        }
    }
    if (out.requires_grad()) {
        out.node()->parents = {x.node(), w.node(), b.node()};
        out.node()->backward = [Tn, ci, co, To](NodeT<T>& o) {
            auto& px = *o.parents[0];
            auto& pw = *o.parents[1];
            auto& pb = *o.parents[2];
            if (px.requires_grad) {
                px.ensure_grad();
                for (int src = 0; src < Tn; ++src) {
                    for (int c = 0; c < ci; ++c) {
                        double acc = 0.0;
                        for (int dt = 0; dt < 3; ++dt) {
                            const int num = src + 1 - dt;
                            if (num < 0 || num % 2 != 0) continue;
                            const int t = num / 2;
                            if (t >= To) continue;
                            const T* gr = o.grad.data() + size_t(t) * co;
                            const T* wr = pw.value.data() + (size_t(dt) * ci + c) * co;
                            for (int oc = 0; oc < co; ++oc)
                                acc += double(gr[oc]) * double(wr[oc]);
                        }
                        px.grad[size_t(src) * ci + c] += T(acc);
                    }
                }
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                for (int dt = 0; dt < 3; ++dt) {
                    for (int c = 0; c < ci; ++c) {
                        for (int oc = 0; oc < co; ++oc) {
                            double acc = 0.0;
                            for (int t = 0; t < To; ++t) {
                                const int src = 2 * t - 1 + dt;
                                if (src < 0 || src >= Tn) continue;
                                acc += double(px.value[size_t(src) * ci + c]) *
                                       double(o.grad[size_t(t) * co + oc]);
                            }
                            pw.grad[(size_t(dt) * ci + c) * co + oc] += T(acc);
                        }
                    }
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int oc = 0; oc < co; ++oc) {
                    double acc = 0.0;
                    for (int t = 0; t < To; ++t) acc += double(o.grad[size_t(t) * co + oc]);
                    pb.grad[size_t(oc)] += T(acc);
                }
            }
        };
    }
    return out;
}

}  // namespace caplab::ops
