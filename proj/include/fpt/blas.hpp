#pragma once

#include <cstdint>

namespace fpt {

// C[m×n] (+)= A[m×k] · B[k×n], row-major. trans_a/trans_b transpose the
// logical operand (dims given are the logical, post-transpose ones).
void sgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
           float alpha, const float* a, int64_t lda, const float* b, int64_t ldb,
           float beta, float* c, int64_t ldc);

const char* blas_core_name();

// --- vectorized elementwise kernels (compiled -O3 -march=native) ---

// exp(x), |rel err| < ~1e-7; exact 0 below underflow
float fast_expf(float x);
float fast_tanhf(float x);
void vexpf(float* x, int64_t n);

// numerically-stable softmax over each row, in place
void softmax_rows_kernel(float* x, int64_t rows, int64_t cols);
// gx += (gy - dot(gy, y)) * y, rowwise
void softmax_backward_kernel(const float* y, const float* gy, float* gx,
                             int64_t rows, int64_t cols);

// tanh-approximation GELU; t_out (optional) receives tanh(u) for backward
void gelu_forward_kernel(const float* x, float* y, float* t_out, int64_t n);
void gelu_backward_kernel(const float* x, const float* t, const float* gy,
                          float* gx, int64_t n);

void layer_norm_forward_kernel(const float* x, const float* gamma, const float* beta,
                               float* y, float* mean, float* rstd,
                               int64_t rows, int64_t d, float eps);
void layer_norm_backward_kernel(const float* x, const float* gamma,
                                const float* mean, const float* rstd, const float* gy,
                                float* gx, float* ggamma, float* gbeta,
                                int64_t rows, int64_t d);

// y[r,:] += b for every row
void add_bias_kernel(float* y, const float* b, int64_t rows, int64_t cols);
// out[c] += sum over rows of g[r,c]
void colsum_kernel(const float* g, float* out, int64_t rows, int64_t cols);

// decoupled-weight-decay Adam with bias correction, one parameter tensor
void adamw_kernel(float* p, const float* g, float* m, float* v, int64_t n,
                  float lr, float beta1, float beta2, float eps, float wd,
                  int64_t step);

}  // namespace fpt
