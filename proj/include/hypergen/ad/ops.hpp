#pragma once

#include <vector>

#include "hypergen/ad/tape.hpp"
#include "hypergen/ad/tensor.hpp"

// Differentiable primitive set. Every op validates shapes, evaluates eagerly
// in float64, checks the result for non-finite values (fail-fast NaN policy)
// and, when recording is active, appends a pullback expressed in terms of
// these same ops so that gradients can themselves be differentiated (up to
// the tape's nesting cap). l2_norm, cosine_similarity and normalize_rows have
// first-order pullbacks; differentiating through their gradients throws.
namespace hypergen::ad {

// -- elementwise / scalar ---------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);  // same shape, scalar b, or {m,n}+{n}
Tensor sub(const Tensor& a, const Tensor& b);  // same shape or scalar b
Tensor mul(const Tensor& a, const Tensor& b);  // same shape or scalar operand
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// -- linear algebra ----------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k)x(k,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (m,k)x(n,k)^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // (k,m)^T x(k,n)
Tensor mv(const Tensor& a, const Tensor& v);         // (m,k)x(k) -> (m)
Tensor transpose(const Tensor& m);

// -- reductions / broadcasts -------------------------------------------------
Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar
Tensor sum_rows(const Tensor& m);  // (m,n) -> (n), sum over rows
Tensor sum_cols(const Tensor& m);  // (m,n) -> (m), sum over columns
Tensor broadcast_rows(const Tensor& v, int m);      // (n) -> (m,n), rows = v
Tensor broadcast_cols(const Tensor& v, int n);      // (m) -> (m,n), cols = v
Tensor broadcast_scalar(const Tensor& s, Shape to);

// -- structure ----------------------------------------------------------------
Tensor concat(const std::vector<Tensor>& parts, int axis);  // 0: stack, 1: columns
Tensor slice(const Tensor& v, int lo, int hi);              // rank-1
Tensor slice_rows(const Tensor& m, int r0, int r1);
Tensor slice_cols(const Tensor& m, int c0, int c1);
Tensor reshape(const Tensor& x, Shape to);
Tensor pad_vector(const Tensor& v, int lo, int total);
Tensor pad_rows(const Tensor& m, int r0, int total_rows);
Tensor pad_cols(const Tensor& m, int c0, int total_cols);

// -- fused --------------------------------------------------------------------
Tensor softmax_rows(const Tensor& logits);
// Mean over rows of (logsumexp(row) - row[label]); labels in [0, C).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor l2_norm(const Tensor& x);  // sqrt(sum x^2); subgradient 0 at the origin
Tensor cosine_similarity(const Tensor& a, const Tensor& b);  // rank-1 inputs
Tensor normalize_rows(const Tensor& m);  // rows scaled to unit L2 norm
Tensor normalize(const Tensor& v);       // rank-1 convenience

// Constant one-hot matrix (no grad).
Tensor onehot(const std::vector<int>& labels, int classes);

}  // namespace hypergen::ad
