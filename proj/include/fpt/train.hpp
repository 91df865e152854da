#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fpt/adapter.hpp"
#include "fpt/cache.hpp"
#include "fpt/data.hpp"

namespace fpt {

struct TrainConfig {
  int64_t epochs = 20;
  int64_t batch_size = 16;
  double lr_max = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;
  bool augment = true;

  void validate() const;
};

// 0.5 * lr_max * (1 + cos(pi * t / T)), lr_min = 0
double cosine_lr(int64_t t, int64_t T, double lr_max);

// Decoupled weight decay, bias-corrected moments.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, const TrainConfig& cfg);
  void step(double lr);
  void zero_grad();
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Buffer> m_, v_;
  TrainConfig cfg_;
  int64_t t_ = 0;
};

// Mann-Whitney with ties at 1/2; throws when a class is missing.
double auc_binary(const std::vector<float>& scores, const std::vector<int>& labels);
// Macro mean of one-vs-rest AUCs over per-class scores [n][classes];
// classes absent from labels are skipped, none usable -> error.
double auc_macro_ovr(const std::vector<std::vector<float>>& probs,
                     const std::vector<int>& labels, int classes);

struct AugmentParams {
  double scale = 1.0;  // crop area fraction
  double top = 0.0, left = 0.0;
  bool flip = false;
  double brightness = 0.0, contrast = 0.0;
};

AugmentParams draw_augment(Rng& rng);
Image apply_augment(const Image& img, const AugmentParams& p);
Image augment_low(const Image& img, Rng& rng);

struct EpochRow {
  int64_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double auc = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<EpochRow>& rows);

struct EvalResult {
  double loss = 0.0;
  double auc = 0.0;
  std::vector<double> per_class;
};

struct TrainResult {
  std::vector<EpochRow> log;
  double best_auc = 0.0;
  int64_t best_epoch = 0;
  std::map<std::string, Tensor> best_params;  // detached snapshot
};

// cache may be null only when fuse_enabled is false (side-only baseline).
// Validation split falls back to test when the dataset has no val rows.
TrainResult train_model(FptModel& model, const Dataset& ds, const CacheFile* cache,
                        const TrainConfig& cfg, bool fuse_enabled);

EvalResult evaluate(FptModel& model, const Dataset& ds, const CacheFile* cache,
                    const std::string& split, int64_t batch_size, bool fuse_enabled);

}  // namespace fpt
