#pragma once

#include <cstddef>

// Dense float64 kernels behind the autodiff ops. Every kernel has a serial
// reference implementation in kernels::serial; the default entry points may
// parallelize loops over disjoint output ranges with OpenMP. Because each
// output element is produced by the same serial-order inner arithmetic in both
// paths, parallel results are bit-identical to the serial reference for any
// thread count (asserted in tests). Reductions (sum/dot/sumsq) are always
// serial left-to-right: their cost is negligible here and a parallel reduction
// would not be bit-stable.
namespace hypergen::kernels {

void set_parallel(bool enabled);  // process-wide dispatch switch (default on)
bool parallel_enabled();

enum class Unary { Relu, Tanh, Sigmoid, Exp, Neg, Square };

namespace serial {
// c(m,n) = a(m,k) * b(k,n)
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// c(m,n) = a(m,k) * b(n,k)^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c(m,n) = a(k,m)^T * b(k,n)
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void map_unary(Unary op, const double* x, double* y, size_t n);
// out = g * f'(..): relu takes the primal input, tanh/sigmoid the primal output
void relu_bwd(const double* x, const double* g, double* out, size_t n);
void tanh_bwd(const double* y, const double* g, double* out, size_t n);
void sigmoid_bwd(const double* y, const double* g, double* out, size_t n);
void add(const double* a, const double* b, double* c, size_t n);
void sub(const double* a, const double* b, double* c, size_t n);
void mul(const double* a, const double* b, double* c, size_t n);
// y = alpha * x + beta
void scale(const double* x, double alpha, double beta, double* y, size_t n);
}  // namespace serial

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void map_unary(Unary op, const double* x, double* y, size_t n);
void relu_bwd(const double* x, const double* g, double* out, size_t n);
void tanh_bwd(const double* y, const double* g, double* out, size_t n);
void sigmoid_bwd(const double* y, const double* g, double* out, size_t n);
void add(const double* a, const double* b, double* c, size_t n);
void sub(const double* a, const double* b, double* c, size_t n);
void mul(const double* a, const double* b, double* c, size_t n);
void scale(const double* x, double alpha, double beta, double* y, size_t n);

// Serial-order reductions (deterministic for any dispatch mode).
double sum(const double* x, size_t n);
double dot(const double* a, const double* b, size_t n);
double sumsq(const double* x, size_t n);

}  // namespace hypergen::kernels
