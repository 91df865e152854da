#include "fpt/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "fpt/blas.hpp"

namespace fpt {

namespace {

std::string shape_str(const Tensor& t) {
  if (!t.defined()) return "(undefined)";
  std::string s = "(";
  for (int i = 0; i < t.rank(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s + ")";
}

[[noreturn]] void dim_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

bool carries_grad(const Tensor& t) {
  return t.defined() && (t.requires_grad() || t.attached());
}

bool want_grad(std::initializer_list<Tensor> ins) {
  if (!Graph::instance().recording()) return false;
  for (const Tensor& t : ins)
    if (carries_grad(t)) return true;
  return false;
}

void record(const char* op, std::vector<Tensor> inputs, std::vector<Tensor> saved,
            const Tensor& out, std::function<void(Node&)> fn) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.saved = std::move(saved);
  n.output = out;
  n.backward = std::move(fn);
  Graph::instance().push(std::move(n));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) dim_error("matmul", a, b);
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::empty({m, n});
  sgemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, out.data(), n);
  if (want_grad({a, b})) {
    record("matmul", {a, b}, {}, out, [m, k, n](Node& nd) {
      const Tensor& a = nd.inputs[0];
      const Tensor& b = nd.inputs[1];
      const float* g = nd.output.grad();
      if (carries_grad(a))
        sgemm(false, true, m, k, n, 1.0f, g, n, b.data(), n, 1.0f, nd.inputs[0].grad(), k);
      if (carries_grad(b))
        sgemm(true, false, k, n, m, 1.0f, a.data(), k, g, n, 1.0f, nd.inputs[1].grad(), n);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) dim_error("linear", x, w);
  int64_t rows = x.dim(0), in = x.dim(1), out_d = w.dim(1);
  if (b.defined() && b.numel() != out_d) dim_error("linear(bias)", w, b);
  Tensor out = Tensor::empty({rows, out_d});
  sgemm(false, false, rows, out_d, in, 1.0f, x.data(), in, w.data(), out_d, 0.0f,
        out.data(), out_d);
  if (b.defined()) add_bias_kernel(out.data(), b.data(), rows, out_d);
  if (want_grad({x, w, b})) {
    record("linear", {x, w, b}, {}, out, [rows, in, out_d](Node& nd) {
      const Tensor& x = nd.inputs[0];
      const Tensor& w = nd.inputs[1];
      Tensor& b = nd.inputs[2];
      const float* g = nd.output.grad();
      if (carries_grad(x))
        sgemm(false, true, rows, in, out_d, 1.0f, g, out_d, w.data(), out_d, 1.0f,
              nd.inputs[0].grad(), in);
      if (carries_grad(w))
        sgemm(true, false, in, out_d, rows, 1.0f, x.data(), in, g, out_d, 1.0f,
              nd.inputs[1].grad(), out_d);
      if (carries_grad(b)) colsum_kernel(g, b.grad(), rows, out_d);
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("add", a, b);
  int64_t n = a.numel();
  Tensor out = Tensor::empty(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (want_grad({a, b})) {
    record("add", {a, b}, {}, out, [n](Node& nd) {
      const float* g = nd.output.grad();
      if (carries_grad(nd.inputs[0])) nd.inputs[0].accumulate_grad(g, n);
      if (carries_grad(nd.inputs[1])) nd.inputs[1].accumulate_grad(g, n);
    });
  }
  return out;
}

Tensor add_rows(const Tensor& x, const Tensor& e) {
  if (x.rank() != 2 || e.rank() != 2 || x.dim(1) != e.dim(1) || x.dim(0) % e.dim(0) != 0)
    dim_error("add_rows", x, e);
  int64_t rows = x.dim(0), n = e.dim(0), d = x.dim(1);
  int64_t reps = rows / n;
  Tensor out = Tensor::empty(x.shape());
  const float* px = x.data();
  const float* pe = e.data();
  float* po = out.data();
  for (int64_t r = 0; r < reps; ++r) {
    const float* block = px + r * n * d;
    float* ob = po + r * n * d;
    for (int64_t i = 0; i < n * d; ++i) ob[i] = block[i] + pe[i];
  }
  if (want_grad({x, e})) {
    record("add_rows", {x, e}, {}, out, [reps, n, d](Node& nd) {
      const float* g = nd.output.grad();
      if (carries_grad(nd.inputs[0])) nd.inputs[0].accumulate_grad(g, reps * n * d);
      if (carries_grad(nd.inputs[1])) {
        float* ge = nd.inputs[1].grad();
        for (int64_t r = 0; r < reps; ++r) {
          const float* gb = g + r * n * d;
          for (int64_t i = 0; i < n * d; ++i) ge[i] += gb[i];
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float s) {
  int64_t n = x.numel();
  Tensor out = Tensor::empty(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * s;
  if (want_grad({x})) {
    record("scale", {x}, {}, out, [n, s](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      const float* g = nd.output.grad();
      float* gx = nd.inputs[0].grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * s;
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("mul", a, b);
  int64_t n = a.numel();
  Tensor out = Tensor::empty(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (want_grad({a, b})) {
    record("mul", {a, b}, {}, out, [n](Node& nd) {
      const float* g = nd.output.grad();
      const Tensor& a = nd.inputs[0];
      const Tensor& b = nd.inputs[1];
      if (carries_grad(a)) {
        float* ga = nd.inputs[0].grad();
        const float* pb = b.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (carries_grad(b)) {
        float* gb = nd.inputs[1].grad();
        const float* pa = a.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1 || !gamma.defined() || !beta.defined()) dim_error("layer_norm", x, gamma);
  int64_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) dim_error("layer_norm", x, gamma);
  if (eps <= 0.0f) throw std::invalid_argument("layer_norm: eps must be positive");
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::empty(x.shape());
  Tensor mean = Tensor::empty({rows});
  Tensor rstd = Tensor::empty({rows});
  layer_norm_forward_kernel(x.data(), gamma.data(), beta.data(), out.data(),
                            mean.data(), rstd.data(), rows, d, eps);
  if (want_grad({x, gamma, beta})) {
    record("layer_norm", {x, gamma, beta}, {mean, rstd}, out, [rows, d](Node& nd) {
      Tensor& x = nd.inputs[0];
      Tensor& gamma = nd.inputs[1];
      Tensor& beta = nd.inputs[2];
      const float* g = nd.output.grad();
      // the kernel writes all three; route unused sinks to scratch
      bool nx = carries_grad(x), ng = carries_grad(gamma), nb = carries_grad(beta);
      Tensor sx, sg, sb;
      float* gx = nx ? x.grad() : (sx = Tensor::zeros(x.shape())).data();
      float* gg = ng ? gamma.grad() : (sg = Tensor::zeros(gamma.shape())).data();
      float* gb = nb ? beta.grad() : (sb = Tensor::zeros(beta.shape())).data();
      layer_norm_backward_kernel(x.data(), gamma.data(), nd.saved[0].data(),
                                 nd.saved[1].data(), g, gx, gg, gb, rows, d);
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  int64_t n = x.numel();
  Tensor out = Tensor::empty(x.shape());
  bool rec = want_grad({x});
  Tensor tanh_saved;
  if (rec) tanh_saved = Tensor::empty(x.shape());
  gelu_forward_kernel(x.data(), out.data(), rec ? tanh_saved.data() : nullptr, n);
  if (rec) {
    record("gelu", {x}, {tanh_saved}, out, [n](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      gelu_backward_kernel(nd.inputs[0].data(), nd.saved[0].data(),
                           nd.output.grad(), nd.inputs[0].grad(), n);
    });
  }
  return out;
}

static Tensor softmax_common(const Tensor& input_for_graph, Tensor out,
                             int64_t rows, int64_t cols, bool rec) {
  softmax_rows_kernel(out.data(), rows, cols);
  if (rec) {
    record("softmax_rows", {input_for_graph}, {}, out, [rows, cols](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      softmax_backward_kernel(nd.output.data(), nd.output.grad(),
                              nd.inputs[0].grad(), rows, cols);
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("softmax_rows: rank-0 input");
  int64_t cols = x.dim(x.rank() - 1);
  int64_t rows = x.numel() / cols;
  return softmax_common(x, x.clone(), rows, cols, want_grad({x}));
}

Tensor softmax_rows_inplace(Tensor x) {
  if (x.rank() < 1) throw std::invalid_argument("softmax_rows: rank-0 input");
  int64_t cols = x.dim(x.rank() - 1);
  int64_t rows = x.numel() / cols;
  bool rec = want_grad({x});
  Tensor out = Tensor::adopt(x.shape(), x.steal_data());
  return softmax_common(x, std::move(out), rows, cols, rec);
}

Tensor sum_all(const Tensor& x) {
  int64_t n = x.numel();
  const float* px = x.data();
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::from({1}, {acc});
  if (want_grad({x})) {
    record("sum_all", {x}, {}, out, [n](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      float g = nd.output.grad()[0];
      float* gx = nd.inputs[0].grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

// [B·n, 3D] -> [B·H, n, d] for one of q/k/v
Tensor qkv_head(const Tensor& qkv, int64_t B, int64_t n, int64_t H, int which) {
  if (qkv.rank() != 2 || qkv.dim(0) != B * n || qkv.dim(1) % 3 != 0)
    throw std::invalid_argument("qkv_head: bad input " + shape_str(qkv));
  int64_t D = qkv.dim(1) / 3;
  if (D % H != 0) throw std::invalid_argument("qkv_head: D not divisible by H");
  int64_t d = D / H;
  Tensor out = Tensor::empty({B * H, n, d});
  const float* src = qkv.data();
  float* dst = out.data();
  int64_t src_row = 3 * D;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h) {
      float* o = dst + ((b * H + h) * n) * d;
      const float* s = src + b * n * src_row + which * D + h * d;
      for (int64_t i = 0; i < n; ++i)
        std::memcpy(o + i * d, s + i * src_row, d * sizeof(float));
    }
  if (want_grad({qkv})) {
    record("qkv_head", {qkv}, {}, out, [B, n, H, D, d, which, src_row](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      const float* g = nd.output.grad();
      float* gq = nd.inputs[0].grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h) {
          const float* gi = g + ((b * H + h) * n) * d;
          float* go = gq + b * n * src_row + which * D + h * d;
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) go[i * src_row + j] += gi[i * d + j];
        }
    });
  }
  return out;
}

Tensor split_heads(const Tensor& x, int64_t B, int64_t n, int64_t H) {
  if (x.rank() != 2 || x.dim(0) != B * n || x.dim(1) % H != 0)
    throw std::invalid_argument("split_heads: bad input " + shape_str(x));
  int64_t D = x.dim(1), d = D / H;
  Tensor out = Tensor::empty({B * H, n, d});
  const float* src = x.data();
  float* dst = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h) {
      float* o = dst + ((b * H + h) * n) * d;
      const float* s = src + b * n * D + h * d;
      for (int64_t i = 0; i < n; ++i)
        std::memcpy(o + i * d, s + i * D, d * sizeof(float));
    }
  if (want_grad({x})) {
    record("split_heads", {x}, {}, out, [B, n, H, D, d](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      const float* g = nd.output.grad();
      float* gx = nd.inputs[0].grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h) {
          const float* gi = g + ((b * H + h) * n) * d;
          float* go = gx + b * n * D + h * d;
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) go[i * D + j] += gi[i * d + j];
        }
    });
  }
  return out;
}

Tensor merge_heads(const Tensor& x, int64_t B, int64_t n, int64_t H) {
  if (x.rank() != 3 || x.dim(0) != B * H || x.dim(1) != n)
    throw std::invalid_argument("merge_heads: bad input " + shape_str(x));
  int64_t d = x.dim(2), D = H * d;
  Tensor out = Tensor::empty({B * n, D});
  const float* src = x.data();
  float* dst = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h) {
      const float* s = src + ((b * H + h) * n) * d;
      float* o = dst + b * n * D + h * d;
      for (int64_t i = 0; i < n; ++i)
        std::memcpy(o + i * D, s + i * d, d * sizeof(float));
    }
  if (want_grad({x})) {
    record("merge_heads", {x}, {}, out, [B, n, H, D, d](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      const float* g = nd.output.grad();
      float* gx = nd.inputs[0].grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h) {
          const float* gi = g + b * n * D + h * d;
          float* go = gx + ((b * H + h) * n) * d;
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) go[i * d + j] += gi[i * D + j];
        }
    });
  }
  return out;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b, float alpha) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    dim_error("bmm_nt", a, b);
  int64_t G = a.dim(0), n = a.dim(1), d = a.dim(2), m = b.dim(1);
  Tensor out = Tensor::empty({G, n, m});
  for (int64_t g = 0; g < G; ++g)
    sgemm(false, true, n, m, d, alpha, a.data() + g * n * d, d,
          b.data() + g * m * d, d, 0.0f, out.data() + g * n * m, m);
  if (want_grad({a, b})) {
    record("bmm_nt", {a, b}, {}, out, [G, n, m, d, alpha](Node& nd) {
      const Tensor& a = nd.inputs[0];
      const Tensor& b = nd.inputs[1];
      const float* g = nd.output.grad();
      if (carries_grad(a)) {
        float* ga = nd.inputs[0].grad();
        for (int64_t i = 0; i < G; ++i)
          sgemm(false, false, n, d, m, alpha, g + i * n * m, m,
                b.data() + i * m * d, d, 1.0f, ga + i * n * d, d);
      }
      if (carries_grad(b)) {
        float* gb = nd.inputs[1].grad();
        for (int64_t i = 0; i < G; ++i)
          sgemm(true, false, m, d, n, alpha, g + i * n * m, m,
                a.data() + i * n * d, d, 1.0f, gb + i * m * d, d);
      }
    });
  }
  return out;
}

Tensor bmm_nn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    dim_error("bmm_nn", a, b);
  int64_t G = a.dim(0), n = a.dim(1), m = a.dim(2), d = b.dim(2);
  Tensor out = Tensor::empty({G, n, d});
  for (int64_t g = 0; g < G; ++g)
    sgemm(false, false, n, d, m, 1.0f, a.data() + g * n * m, m,
          b.data() + g * m * d, d, 0.0f, out.data() + g * n * d, d);
  if (want_grad({a, b})) {
    record("bmm_nn", {a, b}, {}, out, [G, n, m, d](Node& nd) {
      const Tensor& a = nd.inputs[0];
      const Tensor& b = nd.inputs[1];
      const float* g = nd.output.grad();
      if (carries_grad(a)) {
        float* ga = nd.inputs[0].grad();
        for (int64_t i = 0; i < G; ++i)
          sgemm(false, true, n, m, d, 1.0f, g + i * n * d, d,
                b.data() + i * m * d, d, 1.0f, ga + i * n * m, m);
      }
      if (carries_grad(b)) {
        float* gb = nd.inputs[1].grad();
        for (int64_t i = 0; i < G; ++i)
          sgemm(true, false, m, d, n, 1.0f, a.data() + i * n * m, m,
                g + i * n * d, d, 1.0f, gb + i * m * d, d);
      }
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& x, int64_t B) {
  if (x.rank() != 2) throw std::invalid_argument("repeat_rows: need 2-D input");
  int64_t n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::empty({B * n, d});
  for (int64_t b = 0; b < B; ++b)
    std::memcpy(out.data() + b * n * d, x.data(), n * d * sizeof(float));
  if (want_grad({x})) {
    record("repeat_rows", {x}, {}, out, [B, n, d](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      const float* g = nd.output.grad();
      float* gx = nd.inputs[0].grad();
      for (int64_t b = 0; b < B; ++b) {
        const float* gb = g + b * n * d;
        for (int64_t i = 0; i < n * d; ++i) gx[i] += gb[i];
      }
    });
  }
  return out;
}

Tensor concat_tokens(const Tensor& a, int64_t na, const Tensor& b, int64_t nb,
                     int64_t B) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) ||
      a.dim(0) != B * na || b.dim(0) != B * nb)
    dim_error("concat_tokens", a, b);
  int64_t d = a.dim(1), n = na + nb;
  Tensor out = Tensor::empty({B * n, d});
  for (int64_t i = 0; i < B; ++i) {
    std::memcpy(out.data() + i * n * d, a.data() + i * na * d, na * d * sizeof(float));
    std::memcpy(out.data() + (i * n + na) * d, b.data() + i * nb * d,
                nb * d * sizeof(float));
  }
  if (want_grad({a, b})) {
    record("concat_tokens", {a, b}, {}, out, [B, na, nb, n, d](Node& nd) {
      const float* g = nd.output.grad();
      if (carries_grad(nd.inputs[0])) {
        float* ga = nd.inputs[0].grad();
        for (int64_t i = 0; i < B; ++i) {
          const float* gs = g + i * n * d;
          float* gd = ga + i * na * d;
          for (int64_t j = 0; j < na * d; ++j) gd[j] += gs[j];
        }
      }
      if (carries_grad(nd.inputs[1])) {
        float* gb = nd.inputs[1].grad();
        for (int64_t i = 0; i < B; ++i) {
          const float* gs = g + (i * n + na) * d;
          float* gd = gb + i * nb * d;
          for (int64_t j = 0; j < nb * d; ++j) gd[j] += gs[j];
        }
      }
    });
  }
  return out;
}

Tensor slice_tokens(const Tensor& x, int64_t n, int64_t B, int64_t start, int64_t len) {
  if (x.rank() != 2 || x.dim(0) != B * n || start < 0 || start + len > n)
    throw std::invalid_argument("slice_tokens: bad slice of " + shape_str(x));
  int64_t d = x.dim(1);
  Tensor out = Tensor::empty({B * len, d});
  for (int64_t i = 0; i < B; ++i)
    std::memcpy(out.data() + i * len * d, x.data() + (i * n + start) * d,
                len * d * sizeof(float));
  if (want_grad({x})) {
    record("slice_tokens", {x}, {}, out, [B, n, start, len, d](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      const float* g = nd.output.grad();
      float* gx = nd.inputs[0].grad();
      for (int64_t i = 0; i < B; ++i) {
        const float* gs = g + i * len * d;
        float* gd = gx + (i * n + start) * d;
        for (int64_t j = 0; j < len * d; ++j) gd[j] += gs[j];
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("cross_entropy: logits " + shape_str(logits) +
                                " vs " + std::to_string(labels.size()) + " labels");
  int64_t B = logits.dim(0), C = logits.dim(1);
  for (int y : labels)
    if (y < 0 || y >= C)
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                              " outside [0," + std::to_string(C) + ")");
  Tensor probs = Tensor::empty({B, C});
  const float* lp = logits.data();
  float* pp = probs.data();
  double total = 0.0;
  for (int64_t i = 0; i < B; ++i) {
    const float* row = lp + i * C;
    float mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = row[c] > mx ? row[c] : mx;
    double sum = 0.0;
    for (int64_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
    double lse = mx + std::log(sum);
    for (int64_t c = 0; c < C; ++c)
      pp[i * C + c] = static_cast<float>(std::exp(row[c] - lse));
    total += lse - row[labels[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::from({1}, {static_cast<float>(total / static_cast<double>(B))});
  if (want_grad({logits})) {
    auto lab = labels;
    record("cross_entropy", {logits}, {probs}, out, [B, C, lab](Node& nd) {
      if (!carries_grad(nd.inputs[0])) return;
      float g = nd.output.grad()[0] / static_cast<float>(B);
      const float* p = nd.saved[0].data();
      float* gx = nd.inputs[0].grad();
      for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) {
          float onehot = (c == lab[static_cast<size_t>(i)]) ? 1.0f : 0.0f;
          gx[i * C + c] += g * (p[i * C + c] - onehot);
        }
    });
  }
  return out;
}

}  // namespace fpt
