#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fpt/tensor.hpp"

namespace fpt {

struct ViTConfig {
  int64_t image_size = 224;
  int64_t patch = 16;
  int64_t layers = 12;
  int64_t dim = 768;
  int64_t heads = 12;
  int64_t mlp_ratio = 4;
  int64_t channels = 3;
  bool with_class_token = true;

  int64_t grid() const { return image_size / patch; }
  int64_t patch_tokens() const { return grid() * grid(); }
  int64_t tokens() const { return patch_tokens() + (with_class_token ? 1 : 0); }
  int64_t head_dim() const { return dim / heads; }
  int64_t patch_dim() const { return patch * patch * channels; }
  void validate() const;
};

struct TokenSequence {
  Tensor tokens;  // [n, D]
  bool has_class_token = false;
};

struct LayerTap {
  int layer_index = 0;   // 1-based
  Tensor attn;           // [H, n, n], post-softmax
  Tensor keys;           // [H, n, d_h], pre-attention projections
  Tensor values;         // [H, n, d_h]
};

struct BlockWeights {
  Tensor ln1_g, ln1_b;
  Tensor qkv_w, qkv_b;    // [D, 3D], [3D]
  Tensor proj_w, proj_b;  // [D, D], [D]
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b;    // [D, mlp_ratio·D]
  Tensor fc2_w, fc2_b;
};

struct ViTWeights {
  ViTConfig cfg;
  Tensor patch_w, patch_b;  // [P·P·C, D], [D]
  Tensor pos;               // [tokens, D]
  Tensor cls;               // [1, D]
  std::vector<BlockWeights> blocks;
  Tensor lnf_g, lnf_b;

  static ViTWeights init(const ViTConfig& cfg, const Rng& rng);
  static ViTWeights from_named(const ViTConfig& cfg,
                               const std::map<std::string, Tensor>& named,
                               const std::string& prefix);
  std::map<std::string, Tensor> named(const std::string& prefix) const;
  std::vector<Tensor*> params();  // fixed enumeration order
  void set_requires_grad(bool b);
  int64_t param_count() const;
};

// closed-form tensor-count sum; equals ViTWeights::init(cfg, ·).param_count()
int64_t vit_param_count(const ViTConfig& cfg);

// image [h, w, c] -> flattened patch rows [N_patch, P·P·C]; pure rearrangement
Tensor patch_rows(const Tensor& image, const ViTConfig& cfg);

// Patch embedding: flatten + project, class token prepended, positions added
TokenSequence patchify(const Tensor& image, const ViTWeights& w);

// Bare multi-head self-attention on (already normalized) tokens.
std::pair<TokenSequence, std::optional<LayerTap>> msa(const TokenSequence& z,
                                                      const BlockWeights& w,
                                                      const ViTConfig& cfg,
                                                      bool record_tap);

// Pre-norm block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'
std::pair<TokenSequence, std::optional<LayerTap>> vit_block(const TokenSequence& z,
                                                            const BlockWeights& w,
                                                            const ViTConfig& cfg,
                                                            bool record_tap);

// Frozen high-res pass; inference mode, taps for requested (1-based) layers.
std::vector<LayerTap> lpm_forward(const Tensor& image_high, const ViTWeights& w,
                                  const std::set<int>& tap_layers);

// --- batched internals (B stacked images; tokens as [B·n, D]) ---

// sink receives the batched blobs for one tapped layer: attn [B·H, n, n],
// keys/values [B·H, n, d]; image b occupies the contiguous head rows b·H..(b+1)·H
using TapSinkBatched =
    std::function<void(int layer_index, const Tensor& attn, const Tensor& keys,
                       const Tensor& values, int64_t B, int64_t n)>;

Tensor vit_embed_batched(const std::vector<const Tensor*>& images, const ViTWeights& w);
Tensor vit_block_batched(const Tensor& x, const BlockWeights& w, const ViTConfig& cfg,
                         int64_t B, int64_t n, bool want_tap, TapSinkBatched sink,
                         int layer_index);
Tensor vit_blocks_batched(Tensor x, const ViTWeights& w, int64_t B,
                          const std::set<int>& tap_layers, TapSinkBatched sink);

void lpm_forward_batched(const std::vector<const Tensor*>& images, const ViTWeights& w,
                         const std::set<int>& tap_layers, TapSinkBatched sink);

}  // namespace fpt
