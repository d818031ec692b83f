#include "hypergen/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

namespace hypergen::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Below these sizes the OpenMP fork/join overhead dominates; the dispatch
// thresholds affect speed only, never results.
constexpr int kMinRowsParallel = 8;
constexpr long long kMinMatmulWork = 64 * 1024;
constexpr size_t kMinMapParallel = 16 * 1024;

inline bool par(long long work, int rows) {
    return g_parallel.load(std::memory_order_relaxed) && rows >= kMinRowsParallel &&
           work >= kMinMatmulWork;
}
inline bool par_map(size_t n) {
    return g_parallel.load(std::memory_order_relaxed) && n >= kMinMapParallel;
}

inline void matmul_nn_row(const double* a, const double* b, double* c, int i, int k, int n) {
    double* crow = c + static_cast<size_t>(i) * n;
    std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
    const double* arow = a + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
        const double av = arow[l];
        const double* brow = b + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int i, int k, int n) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<size_t>(j) * k;
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
        crow[j] = acc;
    }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, int i, int m, int k,
                          int n) {
    double* crow = c + static_cast<size_t>(i) * n;
    std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
    for (int l = 0; l < k; ++l) {
        const double av = a[static_cast<size_t>(l) * m + i];
        const double* brow = b + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline double apply_unary(Unary op, double v) {
    switch (op) {
        case Unary::Relu: return v > 0.0 ? v : 0.0;
        case Unary::Tanh: return std::tanh(v);
        case Unary::Sigmoid: return 1.0 / (1.0 + std::exp(-v));
        case Unary::Exp: return std::exp(v);
        case Unary::Neg: return -v;
        case Unary::Square: return v * v;
    }
    return v;
}
}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n);
}

void map_unary(Unary op, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = apply_unary(op, x[i]);
}

void relu_bwd(const double* x, const double* g, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void tanh_bwd(const double* y, const double* g, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = g[i] * (1.0 - y[i] * y[i]);
}

void sigmoid_bwd(const double* y, const double* g, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = g[i] * y[i] * (1.0 - y[i]);
}

void add(const double* a, const double* b, double* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void scale(const double* x, double alpha, double beta, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta;
}

}  // namespace serial

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    if (par(static_cast<long long>(m) * k * n, m)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
    } else {
        serial::matmul_nn(a, b, c, m, k, n);
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    if (par(static_cast<long long>(m) * k * n, m)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
    } else {
        serial::matmul_nt(a, b, c, m, k, n);
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    if (par(static_cast<long long>(m) * k * n, m)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n);
    } else {
        serial::matmul_tn(a, b, c, m, k, n);
    }
}

void map_unary(Unary op, const double* x, double* y, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) y[i] = apply_unary(op, x[i]);
    } else {
        serial::map_unary(op, x, y, n);
    }
}

void relu_bwd(const double* x, const double* g, double* out, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
    } else {
        serial::relu_bwd(x, g, out, n);
    }
}

void tanh_bwd(const double* y, const double* g, double* out, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) out[i] = g[i] * (1.0 - y[i] * y[i]);
    } else {
        serial::tanh_bwd(y, g, out, n);
    }
}

void sigmoid_bwd(const double* y, const double* g, double* out, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) out[i] = g[i] * y[i] * (1.0 - y[i]);
    } else {
        serial::sigmoid_bwd(y, g, out, n);
    }
}

void add(const double* a, const double* b, double* c, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) c[i] = a[i] + b[i];
    } else {
        serial::add(a, b, c, n);
    }
}

void sub(const double* a, const double* b, double* c, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) c[i] = a[i] - b[i];
    } else {
        serial::sub(a, b, c, n);
    }
}

void mul(const double* a, const double* b, double* c, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) c[i] = a[i] * b[i];
    } else {
        serial::mul(a, b, c, n);
    }
}

void scale(const double* x, double alpha, double beta, double* y, size_t n) {
    if (par_map(n)) {
        const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < nn; ++i) y[i] = alpha * x[i] + beta;
    } else {
        serial::scale(x, alpha, beta, y, n);
    }
}

double sum(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double dot(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sumsq(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

}  // namespace hypergen::kernels
