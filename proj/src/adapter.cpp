#include "fpt/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "fpt/ops.hpp"

namespace fpt {

void FptConfig::validate() const {
  if (L_S > L_M || L_S <= 0)
    throw std::invalid_argument("FptConfig: need 0 < L_S <= L_M");
  if (k <= 0 || D_M % k != 0 || D_S != D_M / k)
    throw std::invalid_argument("FptConfig: D_S must equal D_M/k");
  if (D_S % H != 0 || D_M % H != 0)
    throw std::invalid_argument("FptConfig: dims not divisible by head count");
  if (token_ratio <= 0.0 || token_ratio > 1.0)
    throw std::invalid_argument("FptConfig: token_ratio outside (0,1]");
  if (n_p <= 0) throw std::invalid_argument("FptConfig: n_p must be positive");
  lpm_config().validate();
  side_config().validate();
}

ViTConfig FptConfig::lpm_config() const {
  return ViTConfig{high_res, patch, L_M, D_M, H, mlp_ratio, channels, true};
}

ViTConfig FptConfig::side_config() const {
  return ViTConfig{low_res, patch, L_S, D_S, H, mlp_ratio, channels, true};
}

int64_t FptConfig::n_sel(int64_t n_patch) const {
  int64_t n = static_cast<int64_t>(token_ratio * static_cast<double>(n_patch) + 1e-6);
  return std::max<int64_t>(1, n);
}

std::set<int> FptConfig::tapped_layers() const {
  std::set<int> s;
  for (int l = 1; l <= L_S; ++l)
    s.insert(side_layer_map(static_cast<int>(L_M), static_cast<int>(L_S), l));
  return s;
}

int side_layer_map(int L_M, int L_S, int l) {
  if (l < 1 || l > L_S || L_S > L_M)
    throw std::out_of_range("side_layer_map: l=" + std::to_string(l) +
                            " outside [1," + std::to_string(L_S) + "]");
  return L_M - L_S + l;
}

std::vector<float> importance_scores_block(const float* attn, int64_t H, int64_t n,
                                           bool class_token_present) {
  if (n < 2) throw std::invalid_argument("importance_scores: need at least 2 tokens");
  int64_t first_patch = class_token_present ? 1 : 0;
  int64_t n_patch = n - first_patch;
  std::vector<double> acc(static_cast<size_t>(n_patch), 0.0);
  for (int64_t h = 0; h < H; ++h) {
    const float* m = attn + h * n * n;
    for (int64_t i = 0; i < n; ++i) {
      const float* row = m + i * n;
      for (int64_t j = 0; j < n_patch; ++j) {
        int64_t col = first_patch + j;
        if (col == i) continue;  // "other tokens upon it"
        acc[static_cast<size_t>(j)] += row[col];
      }
    }
  }
  double denom = static_cast<double>(H) * static_cast<double>(n - 1);
  std::vector<float> out(static_cast<size_t>(n_patch));
  for (int64_t j = 0; j < n_patch; ++j)
    out[static_cast<size_t>(j)] = static_cast<float>(acc[static_cast<size_t>(j)] / denom);
  return out;
}

Tensor importance_scores(const Tensor& attn, bool class_token_present) {
  if (attn.rank() != 3 || attn.dim(1) != attn.dim(2))
    throw std::invalid_argument("importance_scores: expected [H,n,n] attention");
  auto v = importance_scores_block(attn.data(), attn.dim(0), attn.dim(1),
                                   class_token_present);
  return Tensor::from({static_cast<int64_t>(v.size())}, v);
}

std::vector<int> select_important(const std::vector<float>& scores, double token_ratio) {
  if (scores.empty()) throw std::invalid_argument("select_important: empty scores");
  if (token_ratio <= 0.0 || token_ratio > 1.0)
    throw std::invalid_argument("select_important: token_ratio outside (0,1]");
  int64_t n = static_cast<int64_t>(scores.size());
  int64_t n_sel = std::max<int64_t>(
      1, static_cast<int64_t>(token_ratio * static_cast<double>(n) + 1e-6));
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + n_sel, idx.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;  // ties to the lower index
  });
  idx.resize(static_cast<size_t>(n_sel));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> select_random(int64_t n_patch, double token_ratio, uint64_t seed) {
  if (n_patch <= 0) throw std::invalid_argument("select_random: empty token set");
  if (token_ratio <= 0.0 || token_ratio > 1.0)
    throw std::invalid_argument("select_random: token_ratio outside (0,1]");
  int64_t n_sel = std::max<int64_t>(
      1, static_cast<int64_t>(token_ratio * static_cast<double>(n_patch) + 1e-6));
  // partial Fisher-Yates
  std::vector<int> pool(static_cast<size_t>(n_patch));
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(seed);
  for (int64_t i = 0; i < n_sel; ++i) {
    int64_t j = i + rng.uniform_int(n_patch - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(n_sel));
  std::sort(pool.begin(), pool.end());
  return pool;
}

Tensor gather_selected(const Tensor& heads, int64_t b, int64_t H,
                       const std::vector<int>& indices, bool class_token_present) {
  int64_t n = heads.dim(1), d = heads.dim(2);
  int64_t n_sel = static_cast<int64_t>(indices.size());
  int64_t offset = class_token_present ? 1 : 0;
  Tensor out = Tensor::empty({H, n_sel, d});
  for (int64_t h = 0; h < H; ++h) {
    const float* src = heads.data() + ((b * H + h) * n) * d;
    float* dst = out.data() + (h * n_sel) * d;
    for (int64_t i = 0; i < n_sel; ++i) {
      int64_t row = offset + indices[static_cast<size_t>(i)];
      if (row >= n) throw std::out_of_range("gather_selected: index past token count");
      std::memcpy(dst + i * d, src + row * d, static_cast<size_t>(d) * sizeof(float));
    }
  }
  return out;
}

FptModel FptModel::init(const FptConfig& cfg, uint64_t seed) {
  cfg.validate();
  FptModel m;
  m.cfg = cfg;
  Rng rng(seed);
  m.side = ViTWeights::init(cfg.side_config(), rng.split("side"));
  Rng fr = rng.split("fusion");
  for (int64_t l = 0; l < cfg.L_S; ++l) {
    FusionLayer fl;
    Rng lr = fr.split("layer" + std::to_string(l));
    fl.prompts = Tensor::empty({cfg.n_p, cfg.D_M});
    for (int64_t i = 0; i < fl.prompts.numel(); ++i)
      fl.prompts.data()[i] = lr.trunc_normal(0.02f);
    fl.ln_g = Tensor::full({cfg.D_M}, 1.0f);
    fl.ln_b = Tensor::zeros({cfg.D_M});
    m.fusion.push_back(std::move(fl));
  }
  Rng pr = rng.split("f_out");
  m.f_out_w = Tensor::empty({cfg.D_M, cfg.D_S});
  for (int64_t i = 0; i < m.f_out_w.numel(); ++i)
    m.f_out_w.data()[i] = pr.trunc_normal(0.02f);
  m.f_out_b = Tensor::zeros({cfg.D_S});
  Rng hr = rng.split("head");
  m.head_w = Tensor::empty({cfg.D_S, cfg.classes});
  for (int64_t i = 0; i < m.head_w.numel(); ++i)
    m.head_w.data()[i] = hr.trunc_normal(0.02f);
  m.head_b = Tensor::zeros({cfg.classes});
  return m;
}

std::map<std::string, Tensor> FptModel::named() const {
  std::map<std::string, Tensor> m = side.named("side/");
  for (size_t l = 0; l < fusion.size(); ++l) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%02zu", l);
    std::string p = std::string("side/fusion/") + buf + "/";
    m[p + "prompts"] = fusion[l].prompts;
    m[p + "ln/g"] = fusion[l].ln_g;
    m[p + "ln/b"] = fusion[l].ln_b;
  }
  m["side/f_out/w"] = f_out_w;
  m["side/f_out/b"] = f_out_b;
  m["side/head/w"] = head_w;
  m["side/head/b"] = head_b;
  return m;
}

FptModel FptModel::from_named(const FptConfig& cfg,
                              const std::map<std::string, Tensor>& named) {
  cfg.validate();
  FptModel m;
  m.cfg = cfg;
  m.side = ViTWeights::from_named(cfg.side_config(), named, "side/");
  auto get = [&named](const std::string& k) {
    auto it = named.find(k);
    if (it == named.end()) throw std::runtime_error("weights: missing tensor " + k);
    return it->second;
  };
  for (int64_t l = 0; l < cfg.L_S; ++l) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%02zu", static_cast<size_t>(l));
    std::string p = std::string("side/fusion/") + buf + "/";
    FusionLayer fl;
    fl.prompts = get(p + "prompts");
    fl.ln_g = get(p + "ln/g");
    fl.ln_b = get(p + "ln/b");
    m.fusion.push_back(std::move(fl));
  }
  m.f_out_w = get("side/f_out/w");
  m.f_out_b = get("side/f_out/b");
  m.head_w = get("side/head/w");
  m.head_b = get("side/head/b");
  return m;
}

std::vector<std::pair<std::string, std::vector<Tensor*>>> FptModel::param_groups() {
  std::vector<std::pair<std::string, std::vector<Tensor*>>> groups;
  std::vector<Tensor*> embed = {&side.patch_w, &side.patch_b, &side.pos, &side.cls};
  groups.emplace_back("side_embed", std::move(embed));
  std::vector<Tensor*> blocks;
  for (BlockWeights& b : side.blocks)
    for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b,
                      &b.ln2_g, &b.ln2_b, &b.fc1_w, &b.fc1_b, &b.fc2_w, &b.fc2_b})
      blocks.push_back(t);
  blocks.push_back(&side.lnf_g);
  blocks.push_back(&side.lnf_b);
  groups.emplace_back("side_blocks", std::move(blocks));
  std::vector<Tensor*> prompts;
  std::vector<Tensor*> fusion_ln;
  for (FusionLayer& fl : fusion) {
    prompts.push_back(&fl.prompts);
    fusion_ln.push_back(&fl.ln_g);
    fusion_ln.push_back(&fl.ln_b);
  }
  groups.emplace_back("prompts", std::move(prompts));
  groups.emplace_back("fusion_ln", std::move(fusion_ln));
  groups.emplace_back("f_out", std::vector<Tensor*>{&f_out_w, &f_out_b});
  groups.emplace_back("head", std::vector<Tensor*>{&head_w, &head_b});
  return groups;
}

std::vector<Tensor*> FptModel::params() {
  std::vector<Tensor*> ps;
  for (auto& [name, group] : param_groups())
    for (Tensor* t : group) ps.push_back(t);
  return ps;
}

void FptModel::set_requires_grad(bool b) {
  for (Tensor* t : params()) t->set_requires_grad(b);
}

int64_t FptModel::learnable_count() const {
  int64_t n = 0;
  for (Tensor* t : const_cast<FptModel*>(this)->params()) n += t->numel();
  return n;
}

namespace {

// batched fusion: K/V stacked as [B·H, n_sel, d]
Tensor fuse_batched(const Tensor& x, const FusionLayer& fl, const Tensor& k_b,
                    const Tensor& v_b, const Tensor& f_out_w, const Tensor& f_out_b,
                    int64_t B, int64_t n_s, int64_t H) {
  int64_t n_p = fl.prompts.dim(0);
  int64_t d = k_b.dim(2);
  if (fl.prompts.dim(1) % H != 0 || fl.prompts.dim(1) / H != d)
    throw std::invalid_argument("fuse: prompt dim incompatible with K/V head layout");
  float scale = 1.0f / std::sqrt(static_cast<float>(d));
  Tensor q = layer_norm(fl.prompts, fl.ln_g, fl.ln_b);
  Tensor qr = repeat_rows(q, B);
  Tensor qh = split_heads(qr, B, n_p, H);
  Tensor att = softmax_rows_inplace(bmm_nt(qh, k_b, scale));
  Tensor ctx = bmm_nn(att, v_b);
  Tensor merged = merge_heads(ctx, B, n_p, H);
  Tensor resid = add(merged, repeat_rows(fl.prompts, B));  // residual at D_M
  Tensor projected = linear(resid, f_out_w, f_out_b);
  return concat_tokens(x, n_s, projected, n_p, B);
}

Tensor stack_selected(const std::vector<const std::vector<SelectedFeatures>*>& feats,
                      size_t layer_pos, bool keys, int64_t H) {
  int64_t B = static_cast<int64_t>(feats.size());
  const SelectedFeatures& first = (*feats[0])[layer_pos];
  const Tensor& ref = keys ? first.keys : first.values;
  int64_t n_sel = ref.dim(1), d = ref.dim(2);
  Tensor out = Tensor::empty({B * H, n_sel, d});
  for (int64_t b = 0; b < B; ++b) {
    const SelectedFeatures& sf = (*feats[static_cast<size_t>(b)])[layer_pos];
    const Tensor& t = keys ? sf.keys : sf.values;
    if (t.dim(0) != H || t.dim(1) != n_sel || t.dim(2) != d)
      throw std::invalid_argument("side_forward: inconsistent selected-feature shapes");
    std::memcpy(out.data() + b * H * n_sel * d, t.data(),
                static_cast<size_t>(t.numel()) * sizeof(float));
  }
  return out;
}

}  // namespace

TokenSequence fuse(const TokenSequence& z_s, const FusionLayer& fl,
                   const SelectedFeatures& sel, const Tensor& f_out_w,
                   const Tensor& f_out_b, int64_t H) {
  if (sel.keys.rank() != 3 || sel.keys.dim(0) != H)
    throw std::invalid_argument("fuse: selected K/V head count mismatch");
  int64_t n_s = z_s.tokens.dim(0);
  Tensor out = fuse_batched(z_s.tokens, fl, sel.keys, sel.values, f_out_w, f_out_b,
                            1, n_s, H);
  return {out, z_s.has_class_token};
}

Tensor side_forward_batched(const std::vector<const Tensor*>& images_low,
                            const std::vector<const std::vector<SelectedFeatures>*>& feats,
                            FptModel& model, bool fuse_enabled) {
  const FptConfig& cfg = model.cfg;
  ViTConfig scfg = cfg.side_config();
  int64_t B = static_cast<int64_t>(images_low.size());
  int64_t n_s = scfg.tokens();
  if (fuse_enabled) {
    if (feats.size() != images_low.size())
      throw std::invalid_argument("side_forward: need one feature list per image");
    for (const auto* f : feats)
      if (static_cast<int64_t>(f->size()) != cfg.L_S)
        throw std::invalid_argument("side_forward: expected " + std::to_string(cfg.L_S) +
                                    " selected-feature records, got " +
                                    std::to_string(f->size()));
  }
  Tensor x = vit_embed_batched(images_low, model.side);
  for (int64_t l = 0; l < cfg.L_S; ++l) {
    if (fuse_enabled) {
      Tensor k_b = stack_selected(feats, static_cast<size_t>(l), true, cfg.H);
      Tensor v_b = stack_selected(feats, static_cast<size_t>(l), false, cfg.H);
      x = fuse_batched(x, model.fusion[static_cast<size_t>(l)], k_b, v_b,
                       model.f_out_w, model.f_out_b, B, n_s, cfg.H);
      x = vit_block_batched(x, model.side.blocks[static_cast<size_t>(l)], scfg, B,
                            n_s + cfg.n_p, false, {}, 0);
      x = slice_tokens(x, n_s + cfg.n_p, B, 0, n_s);  // prompts removed
    } else {
      x = vit_block_batched(x, model.side.blocks[static_cast<size_t>(l)], scfg, B,
                            n_s, false, {}, 0);
    }
  }
  Tensor cls = slice_tokens(x, n_s, B, 0, 1);  // [B, D_S]
  Tensor h = layer_norm(cls, model.side.lnf_g, model.side.lnf_b);
  return linear(h, model.head_w, model.head_b);
}

Tensor side_forward(const Tensor& image_low, const std::vector<SelectedFeatures>& feats,
                    FptModel& model) {
  std::vector<const Tensor*> imgs = {&image_low};
  std::vector<const std::vector<SelectedFeatures>*> fv = {&feats};
  return side_forward_batched(imgs, fv, model, true);
}

}  // namespace fpt
