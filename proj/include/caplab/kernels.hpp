#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace caplab::kernels {

// Thread cap for parallel kernels. Resolved once from CAPLAB_THREADS; can be
// overridden programmatically. All kernels assign each output element to
// exactly one thread and keep the per-element summation order identical to
// the serial reference, so results are bit-identical at every thread count.
int threads();
void set_threads(int n);

namespace detail {
// Reductions accumulate in double even for float tensors.
template <typename T>
using acc_t = double;
}  // namespace detail

// ---------------------------------------------------------------------------
// Serial reference kernels. These stay deliberately plain; the parallel
// versions below must match them bit for bit.
// ---------------------------------------------------------------------------
namespace serial {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += double(a[i * k + l]) * double(b[l * n + j]);
            c[i * n + j] = T(acc);
        }
    }
}

// c[m x k] = a[m x n] * b^T, b is [k x n]
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int l = 0; l < n; ++l) acc += double(a[i * n + l]) * double(b[j * n + l]);
            c[i * k + j] = T(acc);
        }
    }
}

// c[k x n] = a^T * b, a is [m x k], b is [m x n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < m; ++l) acc += double(a[l * k + i]) * double(b[l * n + j]);
            c[i * n + j] = T(acc);
        }
    }
}

// Softmax along an axis of length L with stride `inner`; `slices` = outer*inner
// lanes laid out so lane s starts at (s/inner)*L*inner + (s%inner).
template <typename T>
void softmax_lanes(const T* x, T* y, int slices, int L, int inner) {
    for (int s = 0; s < slices; ++s) {
        const size_t base = size_t(s / inner) * size_t(L) * inner + size_t(s % inner);
        double mx = -INFINITY;
        for (int t = 0; t < L; ++t) mx = std::max(mx, double(x[base + size_t(t) * inner]));
        double sum = 0.0;
        for (int t = 0; t < L; ++t) sum += std::exp(double(x[base + size_t(t) * inner]) - mx);
        for (int t = 0; t < L; ++t)
            y[base + size_t(t) * inner] = T(std::exp(double(x[base + size_t(t) * inner]) - mx) / sum);
    }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, int rows, int n, double eps) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + size_t(r) * n;
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
        T* yr = y + size_t(r) * n;
        for (int j = 0; j < n; ++j)
            yr[j] = T((double(xr[j]) - mean) * rstd * double(gain[j]) + double(bias[j]));
    }
}

template <typename T>
void gelu(const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double v = double(x[i]);
        y[i] = T(0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)));
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// Parallel kernels (primary entry points).
// ---------------------------------------------------------------------------

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int n, int k);
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void softmax_lanes(const T* x, T* y, int slices, int L, int inner);
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, int rows, int n, double eps);
template <typename T>
void gelu(const T* x, T* y, size_t n);

// dx for softmax given y (softmax output) and dy, same lane layout.
template <typename T>
void softmax_lanes_backward(const T* y, const T* dy, T* dx, int slices, int L, int inner);

}  // namespace caplab::kernels

// Implementation ------------------------------------------------------------

#ifdef _OPENMP
#include <omp.h>
#endif

namespace caplab::kernels {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (size_t(m) * n * k > 32768 && threads() > 1)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += double(a[i * k + l]) * double(b[l * n + j]);
            c[i * n + j] = T(acc);
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int n, int k) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (size_t(m) * n * k > 32768 && threads() > 1)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int l = 0; l < n; ++l) acc += double(a[i * n + l]) * double(b[j * n + l]);
            c[i * k + j] = T(acc);
        }
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (size_t(m) * n * k > 32768 && threads() > 1)
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < m; ++l) acc += double(a[l * k + i]) * double(b[l * n + j]);
            c[i * n + j] = T(acc);
        }
    }
}

template <typename T>
void softmax_lanes(const T* x, T* y, int slices, int L, int inner) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (size_t(slices) * L > 16384 && threads() > 1)
    for (int s = 0; s < slices; ++s) {
        const size_t base = size_t(s / inner) * size_t(L) * inner + size_t(s % inner);
        double mx = -INFINITY;
        for (int t = 0; t < L; ++t) mx = std::max(mx, double(x[base + size_t(t) * inner]));
        double sum = 0.0;
        for (int t = 0; t < L; ++t) sum += std::exp(double(x[base + size_t(t) * inner]) - mx);
        for (int t = 0; t < L; ++t)
            y[base + size_t(t) * inner] = T(std::exp(double(x[base + size_t(t) * inner]) - mx) / sum);
    }
}

template <typename T>
void softmax_lanes_backward(const T* y, const T* dy, T* dx, int slices, int L, int inner) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (size_t(slices) * L > 16384 && threads() > 1)
    for (int s = 0; s < slices; ++s) {
        const size_t base = size_t(s / inner) * size_t(L) * inner + size_t(s % inner);
        double dot = 0.0;
        for (int t = 0; t < L; ++t) {
            const size_t idx = base + size_t(t) * inner;
            dot += double(y[idx]) * double(dy[idx]);
        }
        for (int t = 0; t < L; ++t) {
            const size_t idx = base + size_t(t) * inner;
            dx[idx] = T(double(y[idx]) * (double(dy[idx]) - dot));
        }
    }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, int rows, int n, double eps) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (size_t(rows) * n > 16384 && threads() > 1)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + size_t(r) * n;
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
        T* yr = y + size_t(r) * n;
        for (int j = 0; j < n; ++j)
            yr[j] = T((double(xr[j]) - mean) * rstd * double(gain[j]) + double(bias[j]));
    }
}

template <typename T>
void gelu(const T* x, T* y, size_t n) {
#pragma omp parallel for schedule(static) num_threads(threads()) if (n > 65536 && threads() > 1)
    for (std::int64_t i = 0; i < std::int64_t(n); ++i) {
        const double v = double(x[i]);
        y[i] = T(0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)));
    }
}

}  // namespace caplab::kernels
