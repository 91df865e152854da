#include "fpt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fpt/blas.hpp"
#include "fpt/ops.hpp"

namespace fpt {

namespace {

[[noreturn]] void train_error(const std::string& what) { throw std::runtime_error(what); }

size_t ceil_div(size_t a, int64_t b) { return (a + static_cast<size_t>(b) - 1) / b; }

void shuffle_indices(std::vector<size_t>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
}

// deterministic low-res bank, filled on first touch
Image& low_res_of(const Dataset& ds, size_t i, int64_t low_res, int64_t channels,
                  std::vector<Image>& bank) {
  Image& slot = bank[i];
  if (slot.pix.empty()) {
    Image img = load_image(ds.path_of(i));
    if (img.c != channels)
      train_error(ds.items[i].file + ": expected " + std::to_string(channels) +
                  " channels, got " + std::to_string(img.c));
    slot = (img.h == low_res && img.w == low_res) ? std::move(img)
                                                  : resize_area(img, low_res, low_res);
  }
  return slot;
}

void softmax_probs(const Tensor& logits, std::vector<std::vector<float>>& out) {
  int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<float> row(static_cast<size_t>(c));
  for (int64_t i = 0; i < b; ++i) {
    std::copy_n(logits.data() + i * c, c, row.data());
    softmax_rows_kernel(row.data(), 1, c);
    out.push_back(row);
  }
}

struct SplitPass {
  double loss_sum = 0.0;
  int64_t count = 0;
  std::vector<std::vector<float>> probs;
  std::vector<int> labels;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (lr_max < 0.0) throw std::invalid_argument("train config: lr_max must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train config: betas must lie in [0,1)");
  if (eps <= 0.0) throw std::invalid_argument("train config: eps must be > 0");
}

double cosine_lr(int64_t t, int64_t T, double lr_max) {
  if (T < 1) throw std::invalid_argument("cosine_lr: T must be >= 1");
  if (t < 0 || t > T) throw std::out_of_range("cosine_lr: t outside [0, T]");
  return 0.5 * lr_max * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(T)));
}

AdamW::AdamW(std::vector<Tensor*> params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.emplace_back(p->numel(), /*zero=*/true);
    v_.emplace_back(p->numel(), /*zero=*/true);
  }
}

void AdamW::step(double lr) {
  ++t_;
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor* p = params_[i];
    if (!p->has_grad()) continue;
    adamw_kernel(p->data(), p->grad(), m_[i].data(), v_[i].data(), p->numel(),
                 static_cast<float>(lr), static_cast<float>(cfg_.beta1),
                 static_cast<float>(cfg_.beta2), static_cast<float>(cfg_.eps),
                 static_cast<float>(cfg_.weight_decay), t_);
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

double auc_binary(const std::vector<float>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  if (scores.empty()) throw std::invalid_argument("auc: empty input");
  int64_t n_pos = 0, n_neg = 0;
  for (int l : labels) {
    if (l == 1)
      ++n_pos;
    else if (l == 0)
      ++n_neg;
    else
      throw std::invalid_argument("auc: labels must be 0/1");
  }
  if (n_pos == 0 || n_neg == 0) train_error("auc: undefined, only one class present");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

double macro_ovr(const std::vector<std::vector<float>>& probs, const std::vector<int>& labels,
                 int classes, std::vector<double>* per_class) {
  if (probs.size() != labels.size() || probs.empty())
    throw std::invalid_argument("auc: bad inputs");
  double sum = 0.0;
  int used = 0;
  if (per_class) per_class->assign(static_cast<size_t>(classes), std::nan(""));
  for (int c = 0; c < classes; ++c) {
    int64_t pos = 0;
    for (int l : labels) pos += (l == c);
    if (pos == 0 || pos == static_cast<int64_t>(labels.size())) continue;
    std::vector<float> s(labels.size());
    std::vector<int> bin(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
      s[i] = probs[i][static_cast<size_t>(c)];
      bin[i] = labels[i] == c ? 1 : 0;
    }
    double a = auc_binary(s, bin);
    if (per_class) (*per_class)[static_cast<size_t>(c)] = a;
    sum += a;
    ++used;
  }
  if (used == 0) train_error("auc: undefined, no one-vs-rest task has both classes");
  return sum / used;
}

}  // namespace

double auc_macro_ovr(const std::vector<std::vector<float>>& probs,
                     const std::vector<int>& labels, int classes) {
  return macro_ovr(probs, labels, classes, nullptr);
}

AugmentParams draw_augment(Rng& rng) {
  AugmentParams p;
  p.scale = 0.7 + 0.3 * rng.uniform();
  p.top = rng.uniform();
  p.left = rng.uniform();
  p.flip = rng.uniform() < 0.5;
  p.brightness = -0.2 + 0.4 * rng.uniform();
  p.contrast = -0.2 + 0.4 * rng.uniform();
  return p;
}

Image apply_augment(const Image& img, const AugmentParams& p) {
  double side_h = std::sqrt(p.scale) * static_cast<double>(img.h);
  double side_w = std::sqrt(p.scale) * static_cast<double>(img.w);
  double y0 = p.top * (static_cast<double>(img.h) - side_h);
  double x0 = p.left * (static_cast<double>(img.w) - side_w);
  Image out = resize_bilinear(img, y0, x0, y0 + side_h, x0 + side_w, img.h, img.w);
  if (p.flip) {
    for (int64_t y = 0; y < out.h; ++y)
      for (int64_t x = 0; x < out.w / 2; ++x)
        for (int64_t c = 0; c < out.c; ++c)
          std::swap(out.at(y, x, c), out.at(y, out.w - 1 - x, c));
  }
  double mean = 0.0;
  for (float v : out.pix) mean += v;
  mean /= static_cast<double>(out.pix.size());
  for (float& v : out.pix) {
    double j = (static_cast<double>(v) + p.brightness - mean) * (1.0 + p.contrast) + mean;
    v = static_cast<float>(std::clamp(j, 0.0, 1.0));
  }
  return out;
}

Image augment_low(const Image& img, Rng& rng) { return apply_augment(img, draw_augment(rng)); }

void write_metrics_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) train_error(path + ": cannot open for write");
  os << "epoch,split,loss,auc\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.10g,%.10g\n", static_cast<long long>(r.epoch),
                  r.split.c_str(), r.loss, r.auc);
    os << buf;
  }
  if (!os) train_error(path + ": write failed");
}

namespace {

// forward one batch; returns logits. records[i] scratch keeps feats alive.
Tensor batch_logits(FptModel& model, const Dataset& ds, const CacheFile* cache,
                    const std::vector<size_t>& idx, size_t lo, size_t hi, bool fuse_enabled,
                    std::vector<Image>& bank, Rng* aug_rng, std::vector<int>& labels_out,
                    const std::map<size_t, std::vector<SelectedFeatures>>* record_map) {
  size_t B = hi - lo;
  std::vector<Tensor> imgs(B);
  std::vector<const Tensor*> ptrs(B);
  std::vector<std::vector<SelectedFeatures>> recs(fuse_enabled && !record_map ? B : 0);
  std::vector<const std::vector<SelectedFeatures>*> feats(fuse_enabled ? B : 0);
  labels_out.clear();
  for (size_t b = 0; b < B; ++b) {
    size_t item = idx[lo + b];
    Image im = low_res_of(ds, item, model.cfg.low_res, model.cfg.channels, bank);
    if (aug_rng) im = augment_low(im, *aug_rng);
    imgs[b] = image_to_tensor(im);
    ptrs[b] = &imgs[b];
    labels_out.push_back(ds.items[item].label);
    if (fuse_enabled) {
      if (record_map) {
        feats[b] = &record_map->at(item);
      } else {
        recs[b] = cache->load_record(ds.items[item].file);
        feats[b] = &recs[b];
      }
    }
  }
  return side_forward_batched(ptrs, feats, model, fuse_enabled);
}

EvalResult eval_indices(FptModel& model, const Dataset& ds, const CacheFile* cache,
                        const std::vector<size_t>& idx, int64_t batch_size, bool fuse_enabled,
                        std::vector<Image>& bank,
                        const std::map<size_t, std::vector<SelectedFeatures>>* record_map) {
  NoGradGuard ng;
  SplitPass pass;
  for (size_t lo = 0; lo < idx.size(); lo += static_cast<size_t>(batch_size)) {
    size_t hi = std::min(idx.size(), lo + static_cast<size_t>(batch_size));
    std::vector<int> labels;
    Tensor logits =
        batch_logits(model, ds, cache, idx, lo, hi, fuse_enabled, bank, nullptr, labels, record_map);
    Tensor loss = cross_entropy(logits, labels);
    pass.loss_sum += static_cast<double>(loss.item()) * static_cast<double>(hi - lo);
    pass.count += static_cast<int64_t>(hi - lo);
    softmax_probs(logits, pass.probs);
    pass.labels.insert(pass.labels.end(), labels.begin(), labels.end());
  }
  EvalResult r;
  r.loss = pass.loss_sum / static_cast<double>(pass.count);
  r.auc = macro_ovr(pass.probs, pass.labels, model.cfg.classes, &r.per_class);
  return r;
}

std::map<std::string, Tensor> snapshot_params(const FptModel& model) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : model.named()) out[name] = t.clone();
  return out;
}

}  // namespace

EvalResult evaluate(FptModel& model, const Dataset& ds, const CacheFile* cache,
                    const std::string& split, int64_t batch_size, bool fuse_enabled) {
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  if (fuse_enabled) {
    if (!cache) throw std::invalid_argument("evaluate: fusion requires a cache");
    cache->check_config(model.cfg);
  }
  auto idx = ds.split_indices(split);
  if (idx.empty()) train_error("evaluate: split '" + split + "' has no items");
  std::vector<Image> bank(ds.items.size());
  return eval_indices(model, ds, cache, idx, batch_size, fuse_enabled, bank, nullptr);
}

TrainResult train_model(FptModel& model, const Dataset& ds, const CacheFile* cache,
                        const TrainConfig& cfg, bool fuse_enabled) {
  cfg.validate();
  model.cfg.validate();
  if (fuse_enabled) {
    if (!cache) throw std::invalid_argument("train: fusion requires a cache");
    cache->check_config(model.cfg);
  }
  auto train_idx = ds.split_indices("train");
  if (train_idx.empty()) train_error("train: dataset has no train split");
  std::string val_split = "val";
  auto val_idx = ds.split_indices(val_split);
  if (val_idx.empty()) {
    val_split = "test";
    val_idx = ds.split_indices(val_split);
  }
  if (val_idx.empty()) train_error("train: no val or test split for checkpoint selection");

  // one read per record; reused every epoch
  std::map<size_t, std::vector<SelectedFeatures>> records;
  const std::map<size_t, std::vector<SelectedFeatures>>* record_map = nullptr;
  if (fuse_enabled) {
    for (size_t i : train_idx) records[i] = cache->load_record(ds.items[i].file);
    for (size_t i : val_idx)
      if (!records.count(i)) records[i] = cache->load_record(ds.items[i].file);
    record_map = &records;
  }

  std::vector<Image> bank(ds.items.size());
  Rng root(cfg.seed);
  Rng aug_rng = root.split("augment");
  AdamW opt(model.params(), cfg);
  int64_t steps_per_epoch = static_cast<int64_t>(ceil_div(train_idx.size(), cfg.batch_size));
  int64_t T = cfg.epochs * steps_per_epoch;

  TrainResult res;
  res.best_auc = -1.0;
  int64_t t = 0;
  for (int64_t e = 1; e <= cfg.epochs; ++e) {
    std::vector<size_t> order = train_idx;
    Rng sh = root.split("shuffle/" + std::to_string(e));
    shuffle_indices(order, sh);
    SplitPass pass;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
      std::vector<int> labels;
      RecordGuard rec;
      Tensor logits = batch_logits(model, ds, cache, order, lo, hi, fuse_enabled, bank,
                                   cfg.augment ? &aug_rng : nullptr, labels, record_map);
      Tensor loss = cross_entropy(logits, labels);
      pass.loss_sum += static_cast<double>(loss.item()) * static_cast<double>(hi - lo);
      pass.count += static_cast<int64_t>(hi - lo);
      softmax_probs(logits, pass.probs);
      pass.labels.insert(pass.labels.end(), labels.begin(), labels.end());
      opt.zero_grad();
      Graph::instance().backward(loss);
      opt.step(cosine_lr(t, T, cfg.lr_max));
      ++t;
    }
    double train_auc = macro_ovr(pass.probs, pass.labels, model.cfg.classes, nullptr);
    res.log.push_back({e, "train", pass.loss_sum / static_cast<double>(pass.count), train_auc});
    EvalResult ev =
        eval_indices(model, ds, cache, val_idx, cfg.batch_size, fuse_enabled, bank, record_map);
    res.log.push_back({e, val_split, ev.loss, ev.auc});
    if (ev.auc > res.best_auc) {
      res.best_auc = ev.auc;
      res.best_epoch = e;
      res.best_params = snapshot_params(model);
    }
  }
  return res;
}

}  // namespace fpt
