#include "fpt/vit.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "fpt/ops.hpp"

namespace fpt {

void ViTConfig::validate() const {
  if (image_size <= 0 || patch <= 0 || image_size % patch != 0)
    throw std::invalid_argument("ViTConfig: image_size " + std::to_string(image_size) +
                                " not divisible by patch " + std::to_string(patch));
  if (dim <= 0 || heads <= 0 || dim % heads != 0)
    throw std::invalid_argument("ViTConfig: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  if (layers <= 0 || mlp_ratio <= 0 || channels <= 0)
    throw std::invalid_argument("ViTConfig: non-positive field");
}

namespace {

Tensor tn(const Rng& rng, const std::string& name, std::vector<int64_t> shape) {
  Tensor t = Tensor::empty(std::move(shape));
  Rng r = rng.split(name);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.trunc_normal(0.02f);
  return t;
}

Tensor named_get(const std::map<std::string, Tensor>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error("weights: missing tensor " + key);
  return it->second;
}

std::string block_prefix(const std::string& prefix, size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%02zu", i);
  return prefix + "blocks/" + buf + "/";
}

}  // namespace

ViTWeights ViTWeights::init(const ViTConfig& cfg, const Rng& rng) {
  cfg.validate();
  ViTWeights w;
  w.cfg = cfg;
  int64_t D = cfg.dim;
  w.patch_w = tn(rng, "patch_w", {cfg.patch_dim(), D});
  w.patch_b = Tensor::zeros({D});
  w.pos = tn(rng, "pos", {cfg.tokens(), D});
  w.cls = tn(rng, "cls", {1, D});
  for (int64_t l = 0; l < cfg.layers; ++l) {
    std::string p = "b" + std::to_string(l) + "/";
    BlockWeights b;
    b.ln1_g = Tensor::full({D}, 1.0f);
    b.ln1_b = Tensor::zeros({D});
    b.qkv_w = tn(rng, p + "qkv_w", {D, 3 * D});
    b.qkv_b = Tensor::zeros({3 * D});
    b.proj_w = tn(rng, p + "proj_w", {D, D});
    b.proj_b = Tensor::zeros({D});
    b.ln2_g = Tensor::full({D}, 1.0f);
    b.ln2_b = Tensor::zeros({D});
    b.fc1_w = tn(rng, p + "fc1_w", {D, cfg.mlp_ratio * D});
    b.fc1_b = Tensor::zeros({cfg.mlp_ratio * D});
    b.fc2_w = tn(rng, p + "fc2_w", {cfg.mlp_ratio * D, D});
    b.fc2_b = Tensor::zeros({D});
    w.blocks.push_back(std::move(b));
  }
  w.lnf_g = Tensor::full({D}, 1.0f);
  w.lnf_b = Tensor::zeros({D});
  return w;
}

std::map<std::string, Tensor> ViTWeights::named(const std::string& prefix) const {
  std::map<std::string, Tensor> m;
  m[prefix + "patch_embed/w"] = patch_w;
  m[prefix + "patch_embed/b"] = patch_b;
  m[prefix + "pos"] = pos;
  m[prefix + "cls"] = cls;
  for (size_t i = 0; i < blocks.size(); ++i) {
    std::string bp = block_prefix(prefix, i);
    const BlockWeights& b = blocks[i];
    m[bp + "ln1/g"] = b.ln1_g;
    m[bp + "ln1/b"] = b.ln1_b;
    m[bp + "qkv/w"] = b.qkv_w;
    m[bp + "qkv/b"] = b.qkv_b;
    m[bp + "proj/w"] = b.proj_w;
    m[bp + "proj/b"] = b.proj_b;
    m[bp + "ln2/g"] = b.ln2_g;
    m[bp + "ln2/b"] = b.ln2_b;
    m[bp + "fc1/w"] = b.fc1_w;
    m[bp + "fc1/b"] = b.fc1_b;
    m[bp + "fc2/w"] = b.fc2_w;
    m[bp + "fc2/b"] = b.fc2_b;
  }
  m[prefix + "ln_f/g"] = lnf_g;
  m[prefix + "ln_f/b"] = lnf_b;
  return m;
}

ViTWeights ViTWeights::from_named(const ViTConfig& cfg,
                                  const std::map<std::string, Tensor>& named,
                                  const std::string& prefix) {
  cfg.validate();
  ViTWeights w;
  w.cfg = cfg;
  w.patch_w = named_get(named, prefix + "patch_embed/w");
  w.patch_b = named_get(named, prefix + "patch_embed/b");
  w.pos = named_get(named, prefix + "pos");
  w.cls = named_get(named, prefix + "cls");
  if (w.patch_w.dim(0) != cfg.patch_dim() || w.patch_w.dim(1) != cfg.dim ||
      w.pos.dim(0) != cfg.tokens())
    throw std::runtime_error("weights: embedding shapes do not match the config");
  for (int64_t i = 0; i < cfg.layers; ++i) {
    std::string bp = block_prefix(prefix, static_cast<size_t>(i));
    BlockWeights b;
    b.ln1_g = named_get(named, bp + "ln1/g");
    b.ln1_b = named_get(named, bp + "ln1/b");
    b.qkv_w = named_get(named, bp + "qkv/w");
    b.qkv_b = named_get(named, bp + "qkv/b");
    b.proj_w = named_get(named, bp + "proj/w");
    b.proj_b = named_get(named, bp + "proj/b");
    b.ln2_g = named_get(named, bp + "ln2/g");
    b.ln2_b = named_get(named, bp + "ln2/b");
    b.fc1_w = named_get(named, bp + "fc1/w");
    b.fc1_b = named_get(named, bp + "fc1/b");
    b.fc2_w = named_get(named, bp + "fc2/w");
    b.fc2_b = named_get(named, bp + "fc2/b");
    w.blocks.push_back(std::move(b));
  }
  w.lnf_g = named_get(named, prefix + "ln_f/g");
  w.lnf_b = named_get(named, prefix + "ln_f/b");
  return w;
}

std::vector<Tensor*> ViTWeights::params() {
  std::vector<Tensor*> ps = {&patch_w, &patch_b, &pos, &cls};
  for (BlockWeights& b : blocks)
    for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b,
                      &b.ln2_g, &b.ln2_b, &b.fc1_w, &b.fc1_b, &b.fc2_w, &b.fc2_b})
      ps.push_back(t);
  ps.push_back(&lnf_g);
  ps.push_back(&lnf_b);
  return ps;
}

void ViTWeights::set_requires_grad(bool b) {
  for (Tensor* t : params()) t->set_requires_grad(b);
}

int64_t ViTWeights::param_count() const {
  int64_t n = 0;
  for (Tensor* t : const_cast<ViTWeights*>(this)->params()) n += t->numel();
  return n;
}

int64_t vit_param_count(const ViTConfig& cfg) {
  cfg.validate();
  int64_t D = cfg.dim;
  int64_t M = cfg.mlp_ratio * D;
  int64_t block = 2 * D + (D * 3 * D + 3 * D) + (D * D + D) + 2 * D + (D * M + M) + (M * D + D);
  return cfg.patch_dim() * D + D + cfg.tokens() * D + D + cfg.layers * block + 2 * D;
}

Tensor patch_rows(const Tensor& image, const ViTConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_size ||
      image.dim(1) != cfg.image_size || image.dim(2) != cfg.channels)
    throw std::invalid_argument("patch_rows: image does not match config (" +
                                std::to_string(image.dim(0)) + "x" +
                                std::to_string(image.dim(1)) + "x" +
                                std::to_string(image.dim(2)) + ")");
  int64_t g = cfg.grid(), P = cfg.patch, C = cfg.channels;
  int64_t W = cfg.image_size;
  Tensor out = Tensor::empty({g * g, cfg.patch_dim()});
  float* dst = out.data();
  const float* src = image.data();
  for (int64_t py = 0; py < g; ++py)
    for (int64_t px = 0; px < g; ++px) {
      float* row = dst + (py * g + px) * cfg.patch_dim();
      for (int64_t y = 0; y < P; ++y)
        std::memcpy(row + y * P * C, src + ((py * P + y) * W + px * P) * C,
                    static_cast<size_t>(P * C) * sizeof(float));
    }
  return out;
}

TokenSequence patchify(const Tensor& image, const ViTWeights& w) {
  std::vector<const Tensor*> one = {&image};
  Tensor x = vit_embed_batched(one, w);
  return {x, w.cfg.with_class_token};
}

Tensor vit_embed_batched(const std::vector<const Tensor*>& images, const ViTWeights& w) {
  const ViTConfig& cfg = w.cfg;
  int64_t B = static_cast<int64_t>(images.size());
  int64_t np = cfg.patch_tokens();
  Tensor rows = Tensor::empty({B * np, cfg.patch_dim()});
  for (int64_t b = 0; b < B; ++b) {
    Tensor r = patch_rows(*images[static_cast<size_t>(b)], cfg);
    std::memcpy(rows.data() + b * np * cfg.patch_dim(), r.data(),
                static_cast<size_t>(r.numel()) * sizeof(float));
  }
  Tensor x = linear(rows, w.patch_w, w.patch_b);  // [B·np, D]
  if (cfg.with_class_token) {
    Tensor cls_rep = repeat_rows(w.cls, B);
    x = concat_tokens(cls_rep, 1, x, np, B);
  }
  return add_rows(x, w.pos);
}

namespace {

// attention core from already-normalized tokens; h = LN(z)
Tensor msa_batched(const Tensor& h, const BlockWeights& w, const ViTConfig& cfg,
                   int64_t B, int64_t n, bool want_tap, TapSinkBatched* sink,
                   int layer_index) {
  int64_t H = cfg.heads;
  float scale = 1.0f / std::sqrt(static_cast<float>(cfg.head_dim()));
  Tensor qkv = linear(h, w.qkv_w, w.qkv_b);
  Tensor q = qkv_head(qkv, B, n, H, 0);
  Tensor k = qkv_head(qkv, B, n, H, 1);
  Tensor v = qkv_head(qkv, B, n, H, 2);
  Tensor scores = bmm_nt(q, k, scale);
  Tensor att = softmax_rows_inplace(std::move(scores));
  if (want_tap && sink && *sink) (*sink)(layer_index, att, k, v, B, n);
  Tensor ctx = bmm_nn(att, v);
  Tensor merged = merge_heads(ctx, B, n, H);
  return linear(merged, w.proj_w, w.proj_b);
}

}  // namespace

Tensor vit_block_batched(const Tensor& x, const BlockWeights& w, const ViTConfig& cfg,
                         int64_t B, int64_t n, bool want_tap, TapSinkBatched sink,
                         int layer_index) {
  Tensor h = layer_norm(x, w.ln1_g, w.ln1_b);
  Tensor attn_out = msa_batched(h, w, cfg, B, n, want_tap, &sink, layer_index);
  Tensor x1 = add(x, attn_out);
  Tensor h2 = layer_norm(x1, w.ln2_g, w.ln2_b);
  Tensor f = linear(h2, w.fc1_w, w.fc1_b);
  f = gelu(f);
  f = linear(f, w.fc2_w, w.fc2_b);
  return add(x1, f);
}

std::pair<TokenSequence, std::optional<LayerTap>> msa(const TokenSequence& z,
                                                      const BlockWeights& w,
                                                      const ViTConfig& cfg,
                                                      bool record_tap) {
  if (z.tokens.rank() != 2 || z.tokens.dim(1) != cfg.dim)
    throw std::invalid_argument("msa: token dim mismatch");
  int64_t n = z.tokens.dim(0);
  std::optional<LayerTap> tap;
  TapSinkBatched sink;
  if (record_tap)
    sink = [&tap](int li, const Tensor& a, const Tensor& k, const Tensor& v,
                  int64_t, int64_t) {
      tap = LayerTap{li, a, k, v};
    };
  Tensor out = msa_batched(z.tokens, w, cfg, 1, n, record_tap, &sink, 0);
  return {TokenSequence{out, z.has_class_token}, std::move(tap)};
}

std::pair<TokenSequence, std::optional<LayerTap>> vit_block(const TokenSequence& z,
                                                            const BlockWeights& w,
                                                            const ViTConfig& cfg,
                                                            bool record_tap) {
  if (z.tokens.rank() != 2 || z.tokens.dim(1) != cfg.dim)
    throw std::invalid_argument("vit_block: token dim mismatch");
  int64_t n = z.tokens.dim(0);
  std::optional<LayerTap> tap;
  TapSinkBatched sink;
  if (record_tap)
    sink = [&tap](int li, const Tensor& a, const Tensor& k, const Tensor& v,
                  int64_t, int64_t) {
      tap = LayerTap{li, a, k, v};
    };
  Tensor out = vit_block_batched(z.tokens, w, cfg, 1, n, record_tap, sink, 0);
  return {TokenSequence{out, z.has_class_token}, std::move(tap)};
}

Tensor vit_blocks_batched(Tensor x, const ViTWeights& w, int64_t B,
                          const std::set<int>& tap_layers, TapSinkBatched sink) {
  const ViTConfig& cfg = w.cfg;
  for (int l : tap_layers)
    if (l < 1 || l > cfg.layers)
      throw std::out_of_range("tap layer " + std::to_string(l) + " outside [1," +
                              std::to_string(cfg.layers) + "]");
  int64_t n = x.dim(0) / B;
  for (int64_t l = 1; l <= cfg.layers; ++l) {
    bool want = tap_layers.count(static_cast<int>(l)) > 0;
    x = vit_block_batched(x, w.blocks[static_cast<size_t>(l - 1)], cfg, B, n, want,
                          sink, static_cast<int>(l));
  }
  return x;
}

void lpm_forward_batched(const std::vector<const Tensor*>& images, const ViTWeights& w,
                         const std::set<int>& tap_layers, TapSinkBatched sink) {
  NoGradGuard ng;
  Tensor x = vit_embed_batched(images, w);
  vit_blocks_batched(std::move(x), w, static_cast<int64_t>(images.size()), tap_layers,
                     std::move(sink));
}

std::vector<LayerTap> lpm_forward(const Tensor& image_high, const ViTWeights& w,
                                  const std::set<int>& tap_layers) {
  std::vector<LayerTap> taps;
  std::vector<const Tensor*> one = {&image_high};
  // B = 1: the batched blobs [H, n, ·] are exactly the per-image tap layout
  lpm_forward_batched(one, w, tap_layers,
                      [&taps](int li, const Tensor& a, const Tensor& k,
                              const Tensor& v, int64_t, int64_t) {
                        taps.push_back(LayerTap{li, a, k, v});
                      });
  return taps;
}

}  // namespace fpt
