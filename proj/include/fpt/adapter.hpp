#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fpt/tensor.hpp"
#include "fpt/vit.hpp"

namespace fpt {

struct FptConfig {
  int64_t L_M = 12;
  int64_t L_S = 6;
  int64_t k = 8;
  int64_t n_p = 16;
  double token_ratio = 0.2;
  int64_t high_res = 512;
  int64_t low_res = 128;
  int64_t D_M = 768;
  int64_t D_S = 96;  // D_M / k
  int64_t H = 12;
  int64_t patch = 16;
  int64_t mlp_ratio = 4;
  int64_t channels = 3;
  int64_t classes = 2;

  void validate() const;
  ViTConfig lpm_config() const;
  ViTConfig side_config() const;
  int64_t n_sel(int64_t n_patch) const;
  std::set<int> tapped_layers() const;
};

// l' = L_M - L_S + l
int side_layer_map(int L_M, int L_S, int l);

struct SelectedFeatures {
  int layer_index = 0;       // 1-based LPM layer
  std::vector<int> indices;  // 0-based patch-token indices (class token excluded), ascending
  Tensor keys;               // [H, n_sel, d_h]
  Tensor values;             // [H, n_sel, d_h]
};

// mean over heads and over query rows i≠j of attn[h, i, j], patch columns only
// (class-token column excluded, class-token query row included)
Tensor importance_scores(const Tensor& attn, bool class_token_present);
// same, reading one image's contiguous [H, n, n] block
std::vector<float> importance_scores_block(const float* attn, int64_t H, int64_t n,
                                           bool class_token_present);

std::vector<int> select_important(const std::vector<float>& scores, double token_ratio);
std::vector<int> select_random(int64_t n_patch, double token_ratio, uint64_t seed);

// copy rows `indices` (offset past the class token when present) out of a
// [H, n, d] blob — or image b's rows of a batched [B·H, n, d] blob
Tensor gather_selected(const Tensor& heads, int64_t b, int64_t H,
                       const std::vector<int>& indices, bool class_token_present);

struct FusionLayer {
  Tensor prompts;      // [n_p, D_M]
  Tensor ln_g, ln_b;   // LN over prompts at D_M
};

struct FptModel {
  FptConfig cfg;
  ViTWeights side;                  // reduced-width backbone
  std::vector<FusionLayer> fusion;  // one per side layer
  Tensor f_out_w, f_out_b;          // shared projector D_M -> D_S
  Tensor head_w, head_b;            // D_S -> classes

  static FptModel init(const FptConfig& cfg, uint64_t seed);
  static FptModel from_named(const FptConfig& cfg,
                             const std::map<std::string, Tensor>& named);
  std::map<std::string, Tensor> named() const;
  std::vector<Tensor*> params();
  std::vector<std::pair<std::string, std::vector<Tensor*>>> param_groups();
  void set_requires_grad(bool b);
  int64_t learnable_count() const;
};

// Cross-attention fusion for one image: q = LN(p); heads attend over selected K/V;
// residual at D_M; shared projection; prompts appended after the side tokens.
TokenSequence fuse(const TokenSequence& z_s, const FusionLayer& fl,
                   const SelectedFeatures& sel, const Tensor& f_out_w,
                   const Tensor& f_out_b, int64_t H);

// Full side pass for one image (normalized low-res pixels in, logits out).
Tensor side_forward(const Tensor& image_low, const std::vector<SelectedFeatures>& feats,
                    FptModel& model);

// Batched trainer path. feats[b] holds image b's L_S records (layer-ascending);
// pass fuse_enabled=false for the side-only baseline (no cache needed, feats ignored).
Tensor side_forward_batched(const std::vector<const Tensor*>& images_low,
                            const std::vector<const std::vector<SelectedFeatures>*>& feats,
                            FptModel& model, bool fuse_enabled);

}  // namespace fpt
