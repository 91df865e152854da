#include "fpt/profile.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fpt/blas.hpp"
#include "fpt/image.hpp"
#include "fpt/ops.hpp"
#include "fpt/train.hpp"

namespace fpt {

double ppe(double score, double r) {
  if (score < 0.0 || r < 0.0) throw std::invalid_argument("ppe: score and r must be >= 0");
  return score * std::exp(-std::log10(r + 1.0));
}

double pme(double score, double m) {
  if (score < 0.0 || m < 0.0) throw std::invalid_argument("pme: score and m must be >= 0");
  return score * std::exp(-std::log10(m + 1.0));
}

ParamCensus param_census(FptModel& model, int64_t lpm_param_count) {
  ParamCensus c;
  c.groups.emplace_back("lpm (frozen)", lpm_param_count);
  for (auto& [name, params] : model.param_groups()) {
    int64_t n = 0;
    for (const Tensor* t : params) n += t->numel();
    c.groups.emplace_back(name, n);
    c.learnable += n;
  }
  c.total = c.learnable + lpm_param_count;
  return c;
}

int64_t measure_peak(const std::function<void()>& run) {
  MemoryLedger::instance().reset_peak();
  run();
  return MemoryLedger::instance().peak_bytes();
}

namespace {

void fill_normal(Tensor& t, Rng& rng, float s) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.normal()) * s;
}

}  // namespace

int64_t fpt_step_peak(const FptConfig& cfg, uint64_t seed) {
  cfg.validate();
  FptModel model = FptModel::init(cfg, seed);
  model.set_requires_grad(true);
  Rng rng(splitmix64_mix(seed ^ fnv1a("fpt-peak")));
  int64_t grid = cfg.high_res / cfg.patch;
  int64_t n_sel = cfg.n_sel(grid * grid);
  int64_t d_h = cfg.D_M / cfg.H;
  std::vector<SelectedFeatures> feats;
  for (int l : cfg.tapped_layers()) {
    SelectedFeatures sel;
    sel.layer_index = l;
    sel.indices.resize(static_cast<size_t>(n_sel));
    std::iota(sel.indices.begin(), sel.indices.end(), 0);
    sel.keys = Tensor::empty({cfg.H, n_sel, d_h});
    sel.values = Tensor::empty({cfg.H, n_sel, d_h});
    fill_normal(sel.keys, rng, 0.5f);
    fill_normal(sel.values, rng, 0.5f);
    feats.push_back(std::move(sel));
  }
  Tensor img = Tensor::empty({cfg.low_res, cfg.low_res, cfg.channels});
  fill_normal(img, rng, 1.0f);
  TrainConfig tc;
  AdamW opt(model.params(), tc);
  std::vector<const Tensor*> imgs{&img};
  std::vector<const std::vector<SelectedFeatures>*> fv{&feats};
  std::vector<int> labels{0};
  return measure_peak([&] {
    RecordGuard rec;
    Tensor logits = side_forward_batched(imgs, fv, model, true);
    Tensor loss = cross_entropy(logits, labels);
    opt.zero_grad();
    Graph::instance().backward(loss);
    opt.step(1e-3);
  });
}

namespace {

Tensor full_ft_logits(const Tensor& img, ViTWeights& w, const Tensor& head_w,
                      const Tensor& head_b) {
  Tensor x = vit_embed_batched({&img}, w);
  x = vit_blocks_batched(std::move(x), w, 1, {}, nullptr);
  Tensor cls = slice_tokens(x, w.cfg.tokens(), 1, 0, 1);
  Tensor y = layer_norm(cls, w.lnf_g, w.lnf_b);
  return linear(y, head_w, head_b);
}

}  // namespace

int64_t full_ft_step_peak(const ViTConfig& cfg, int classes, uint64_t seed) {
  cfg.validate();
  ViTWeights w = ViTWeights::init(cfg, Rng(seed));
  w.set_requires_grad(true);
  Rng rng(splitmix64_mix(seed ^ fnv1a("ft-peak")));
  Tensor head_w = Tensor::empty({cfg.dim, classes});
  Tensor head_b = Tensor::zeros({classes});
  fill_normal(head_w, rng, 0.02f);
  head_w.set_requires_grad(true);
  head_b.set_requires_grad(true);
  Tensor img = Tensor::empty({cfg.image_size, cfg.image_size, cfg.channels});
  fill_normal(img, rng, 1.0f);
  std::vector<Tensor*> params = w.params();
  params.push_back(&head_w);
  params.push_back(&head_b);
  TrainConfig tc;
  AdamW opt(params, tc);
  std::vector<int> labels{0};
  return measure_peak([&] {
    RecordGuard rec;
    Tensor logits = full_ft_logits(img, w, head_w, head_b);
    Tensor loss = cross_entropy(logits, labels);
    opt.zero_grad();
    Graph::instance().backward(loss);
    opt.step(1e-3);
  });
}

int64_t full_ft_forward_peak(const ViTConfig& cfg, int classes, uint64_t seed) {
  cfg.validate();
  ViTWeights w = ViTWeights::init(cfg, Rng(seed));
  Rng rng(splitmix64_mix(seed ^ fnv1a("ft-peak")));
  Tensor head_w = Tensor::empty({cfg.dim, classes});
  Tensor head_b = Tensor::zeros({classes});
  fill_normal(head_w, rng, 0.02f);
  Tensor img = Tensor::empty({cfg.image_size, cfg.image_size, cfg.channels});
  fill_normal(img, rng, 1.0f);
  return measure_peak([&] {
    NoGradGuard ng;
    Tensor logits = full_ft_logits(img, w, head_w, head_b);
    (void)logits;
  });
}

std::vector<float> prompt_attention_mass(const FptModel& model, int side_layer,
                                         const SelectedFeatures& sel, int64_t grid) {
  if (side_layer < 1 || side_layer > static_cast<int>(model.fusion.size()))
    throw std::out_of_range("prompt_attention_mass: side layer out of range");
  const FusionLayer& fl = model.fusion[static_cast<size_t>(side_layer - 1)];
  NoGradGuard ng;
  Tensor q = layer_norm(fl.prompts, fl.ln_g, fl.ln_b);  // [n_p, D_M]
  int64_t n_p = q.dim(0);
  int64_t H = model.cfg.H;
  int64_t d_h = model.cfg.D_M / H;
  int64_t n_sel = sel.keys.dim(1);
  std::vector<double> col(static_cast<size_t>(n_sel), 0.0);
  std::vector<float> scores(static_cast<size_t>(n_p * n_sel));
  float alpha = 1.0f / std::sqrt(static_cast<float>(d_h));
  for (int64_t h = 0; h < H; ++h) {
    // q_h [n_p, d_h] (strided view), K_h [n_sel, d_h]
    std::vector<float> qh(static_cast<size_t>(n_p * d_h));
    for (int64_t i = 0; i < n_p; ++i)
      std::copy_n(q.data() + i * model.cfg.D_M + h * d_h, d_h, qh.data() + i * d_h);
    sgemm(false, true, n_p, n_sel, d_h, alpha, qh.data(), d_h,
          sel.keys.data() + h * n_sel * d_h, d_h, 0.0f, scores.data(), n_sel);
    softmax_rows_kernel(scores.data(), n_p, n_sel);
    for (int64_t i = 0; i < n_p; ++i)
      for (int64_t j = 0; j < n_sel; ++j)
        col[static_cast<size_t>(j)] += scores[static_cast<size_t>(i * n_sel + j)];
  }
  std::vector<float> cells(static_cast<size_t>(grid * grid), 0.0f);
  double denom = static_cast<double>(H) * static_cast<double>(n_p);
  for (int64_t j = 0; j < n_sel; ++j) {
    int idx = sel.indices[static_cast<size_t>(j)];
    if (idx < 0 || idx >= grid * grid) throw std::out_of_range("selection index outside grid");
    cells[static_cast<size_t>(idx)] = static_cast<float>(col[static_cast<size_t>(j)] / denom);
  }
  return cells;
}

std::vector<float> uniform_selection_mass(const SelectedFeatures& sel, int64_t grid) {
  std::vector<float> cells(static_cast<size_t>(grid * grid), 0.0f);
  for (int idx : sel.indices) {
    if (idx < 0 || idx >= grid * grid) throw std::out_of_range("selection index outside grid");
    cells[static_cast<size_t>(idx)] = 1.0f;
  }
  return cells;
}

void export_selection_map(const std::vector<float>& cell_mass, int64_t grid,
                          const std::string& out_pgm) {
  if (static_cast<int64_t>(cell_mass.size()) != grid * grid)
    throw std::invalid_argument("export_selection_map: cell count mismatch");
  float mx = 0.0f;
  for (float v : cell_mass) mx = std::max(mx, v);
  Image img;
  img.h = grid;
  img.w = grid;
  img.c = 1;
  img.pix.resize(cell_mass.size());
  for (size_t i = 0; i < cell_mass.size(); ++i)
    img.pix[i] = mx > 0.0f ? cell_mass[i] / mx : 0.0f;
  save_pgm(out_pgm, img);
}

void export_selection_mask(const SelectedFeatures& sel, int64_t grid,
                           const std::string& out_pgm) {
  export_selection_map(uniform_selection_mass(sel, grid), grid, out_pgm);
}

}  // namespace fpt
