// Hot elementwise loops. This TU is compiled -O3 -march=native so the
// polynomial exp and the row reductions vectorize; scalar libm here would
// dominate the LPM forward.
#include <bit>
#include <cmath>
#include <cstdint>

#include "fpt/blas.hpp"

namespace fpt {

namespace {

// branch-free bodies the hot loops inline; the extern entry points below keep
// the public symbols. Kept call-free so the loops vectorize.
[[gnu::always_inline]] inline float fe(float x) {
  // range-reduce: x = n*ln2 + r, e^x = 2^n * e^r, r in [-ln2/2, ln2/2]
  constexpr float kLog2e = 1.442695040888963f;
  constexpr float kLn2Hi = 0.693359375f;
  constexpr float kLn2Lo = -2.12194440e-4f;
  float xc = x > 88.0f ? 88.0f : (x < -87.0f ? -87.0f : x);
  float nf = static_cast<float>(static_cast<int>(xc * kLog2e + (xc >= 0.0f ? 0.5f : -0.5f)));
  float r = xc - nf * kLn2Hi;
  r -= nf * kLn2Lo;
  // degree-6 Taylor, |rel err| < ~2e-8 on the reduced range
  float p = 1.0f / 5040.0f;
  p = p * r + 1.0f / 720.0f;
  p = p * r + 1.0f / 120.0f;
  p = p * r + 1.0f / 24.0f;
  p = p * r + 1.0f / 6.0f;
  p = p * r + 0.5f;
  p = p * r + 1.0f;
  p = p * r + 1.0f;
  float out = p * std::bit_cast<float>(static_cast<uint32_t>(static_cast<int>(nf) + 127) << 23);
  return x < -87.0f ? 0.0f : out;
}

[[gnu::always_inline]] inline float ft(float x) {
  float a = x < 0.0f ? -x : x;
  float t = 1.0f - 2.0f / (fe(2.0f * a) + 1.0f);
  return x < 0.0f ? -t : t;
}

}  // namespace

float fast_expf(float x) { return fe(x); }

float fast_tanhf(float x) { return ft(x); }

void vexpf(float* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) x[i] = fe(x[i]);
}

void softmax_rows_kernel(float* x, int64_t rows, int64_t cols) {
  constexpr int64_t kW = 8;  // fixed-lane reductions so the loops vectorize
  for (int64_t r = 0; r < rows; ++r) {
    float* row = x + r * cols;
    float mx = row[0];
    int64_t c = 0;
    if (cols >= kW) {
      float m8[kW];
      for (int64_t j = 0; j < kW; ++j) m8[j] = row[j];
      for (c = kW; c + kW <= cols; c += kW)
        for (int64_t j = 0; j < kW; ++j) m8[j] = row[c + j] > m8[j] ? row[c + j] : m8[j];
      for (int64_t j = 0; j < kW; ++j) mx = m8[j] > mx ? m8[j] : mx;
    } else {
      c = 1;
      for (; c < cols; ++c) mx = row[c] > mx ? row[c] : mx;
      c = 0;
    }
    for (; c < cols; ++c) mx = row[c] > mx ? row[c] : mx;
    float s8[kW] = {0};
    float sum = 0.0f;
    for (c = 0; c + kW <= cols; c += kW)
      for (int64_t j = 0; j < kW; ++j) {
        float e = fe(row[c + j] - mx);
        row[c + j] = e;
        s8[j] += e;
      }
    for (; c < cols; ++c) {
      float e = fe(row[c] - mx);
      row[c] = e;
      sum += e;
    }
    sum += ((s8[0] + s8[4]) + (s8[1] + s8[5])) + ((s8[2] + s8[6]) + (s8[3] + s8[7]));
    float inv = 1.0f / sum;
    for (c = 0; c < cols; ++c) row[c] *= inv;
  }
}

void softmax_backward_kernel(const float* y, const float* gy, float* gx,
                             int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const float* yr = y + r * cols;
    const float* gr = gy + r * cols;
    float* xr = gx + r * cols;
    float dot = 0.0f;
    for (int64_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
    for (int64_t c = 0; c < cols; ++c) xr[c] += (gr[c] - dot) * yr[c];
  }
}

void gelu_forward_kernel(const float* x, float* y, float* t_out, int64_t n) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  if (t_out) {
    for (int64_t i = 0; i < n; ++i) {
      float v = x[i];
      float t = ft(kC * (v + 0.044715f * v * v * v));
      t_out[i] = t;
      y[i] = 0.5f * v * (1.0f + t);
    }
  } else {
    for (int64_t i = 0; i < n; ++i) {
      float v = x[i];
      float t = ft(kC * (v + 0.044715f * v * v * v));
      y[i] = 0.5f * v * (1.0f + t);
    }
  }
}

void gelu_backward_kernel(const float* x, const float* t, const float* gy,
                          float* gx, int64_t n) {
  constexpr float kC = 0.7978845608028654f;
  for (int64_t i = 0; i < n; ++i) {
    float v = x[i];
    float th = t[i];
    float du = kC * (1.0f + 3.0f * 0.044715f * v * v);
    float d = 0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * du;
    gx[i] += gy[i] * d;
  }
}

void layer_norm_forward_kernel(const float* x, const float* gamma, const float* beta,
                               float* y, float* mean, float* rstd,
                               int64_t rows, int64_t d, float eps) {
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * d;
    float* yr = y + r * d;
    float mu = 0.0f;
    for (int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<float>(d);
    float var = 0.0f;
    for (int64_t i = 0; i < d; ++i) {
      float c = xr[i] - mu;
      var += c * c;
    }
    var /= static_cast<float>(d);
    float rs = 1.0f / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int64_t i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
  }
}

void layer_norm_backward_kernel(const float* x, const float* gamma,
                                const float* mean, const float* rstd, const float* gy,
                                float* gx, float* ggamma, float* gbeta,
                                int64_t rows, int64_t d) {
  float dinv = 1.0f / static_cast<float>(d);
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * d;
    const float* gr = gy + r * d;
    float* xg = gx + r * d;
    float mu = mean[r];
    float rs = rstd[r];
    float sum_g = 0.0f;
    float sum_gx = 0.0f;
    for (int64_t i = 0; i < d; ++i) {
      float xhat = (xr[i] - mu) * rs;
      float gg = gr[i] * gamma[i];
      sum_g += gg;
      sum_gx += gg * xhat;
    }
    for (int64_t i = 0; i < d; ++i) {
      float xhat = (xr[i] - mu) * rs;
      float gg = gr[i] * gamma[i];
      xg[i] += rs * (gg - dinv * sum_g - xhat * dinv * sum_gx);
      ggamma[i] += gr[i] * xhat;
      gbeta[i] += gr[i];
    }
  }
}

void add_bias_kernel(float* y, const float* b, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    float* yr = y + r * cols;
    for (int64_t c = 0; c < cols; ++c) yr[c] += b[c];
  }
}

void colsum_kernel(const float* g, float* out, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const float* gr = g + r * cols;
    for (int64_t c = 0; c < cols; ++c) out[c] += gr[c];
  }
}

void adamw_kernel(float* p, const float* g, float* m, float* v, int64_t n,
                  float lr, float beta1, float beta2, float eps, float wd,
                  int64_t step) {
  float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
  float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    float mhat = m[i] / bc1;
    float vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * wd * p[i];
  }
}

}  // namespace fpt
