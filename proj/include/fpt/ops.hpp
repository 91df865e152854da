#pragma once

#include <vector>

#include "fpt/tensor.hpp"

namespace fpt {

// All ops run eagerly; a graph node is recorded when the tape is recording
// and any input carries gradient. Gradients accumulate (+=) into leaves.

Tensor matmul(const Tensor& a, const Tensor& b);              // [m,k]·[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [R,in]·[in,out]+b
Tensor add(const Tensor& a, const Tensor& b);                 // same shape
Tensor add_rows(const Tensor& x, const Tensor& e);            // x[B·n,D] + tiled e[n,D]
Tensor scale(const Tensor& x, float s);
Tensor mul(const Tensor& a, const Tensor& b);                 // hadamard
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
// Steals x's buffer (x must have no other reader); halves attention peak.
Tensor softmax_rows_inplace(Tensor x);
Tensor sum_all(const Tensor& x);

// attention plumbing; head blobs are [B·H, n, d] row-major
Tensor qkv_head(const Tensor& qkv, int64_t B, int64_t n, int64_t H, int which);
Tensor split_heads(const Tensor& x, int64_t B, int64_t n, int64_t H);
Tensor merge_heads(const Tensor& x, int64_t B, int64_t n, int64_t H);
Tensor bmm_nt(const Tensor& a, const Tensor& b, float alpha);  // [G,n,d]×[G,m,d]ᵀ
Tensor bmm_nn(const Tensor& a, const Tensor& b);               // [G,n,m]×[G,m,d]

// token-sequence layout (batched as B stacked images of n rows)
Tensor repeat_rows(const Tensor& x, int64_t B);
Tensor concat_tokens(const Tensor& a, int64_t na, const Tensor& b, int64_t nb,
                     int64_t B);
Tensor slice_tokens(const Tensor& x, int64_t n, int64_t B, int64_t start,
                    int64_t len);

// mean over batch of -log softmax(logits)[label]
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace fpt
