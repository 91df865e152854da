#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fpt/adapter.hpp"

namespace fpt {

// score discounted by parameter ratio: score * e^(-log10(r + 1))
double ppe(double score, double r);
// score discounted by memory ratio: score * e^(-log10(m + 1))
double pme(double score, double m);

struct ParamCensus {
  int64_t learnable = 0;
  int64_t total = 0;
  std::vector<std::pair<std::string, int64_t>> groups;  // sums exactly to total

  double ratio() const { return static_cast<double>(learnable) / static_cast<double>(total); }
};

ParamCensus param_census(FptModel& model, int64_t lpm_param_count);

struct EfficiencyReport {
  int64_t learnable_params = 0;
  int64_t total_params = 0;
  double r = 0.0;
  int64_t peak_bytes_method = 0;
  int64_t peak_bytes_full_ft = 0;
  double m = 0.0;
  double score = 0.0;
  double ppe_value = 0.0;
  double pme_value = 0.0;
};

// ledger peak over one closure run (reset first)
int64_t measure_peak(const std::function<void()>& run);

// canonical one-step closures measured by the profiler and tests; every
// buffer the step touches (params, moments, activations) is allocated inside
int64_t fpt_step_peak(const FptConfig& cfg, uint64_t seed);
int64_t full_ft_step_peak(const ViTConfig& cfg, int classes, uint64_t seed);
int64_t full_ft_forward_peak(const ViTConfig& cfg, int classes, uint64_t seed);

// mean fusion-attention mass per selected patch cell (grid² cells, 0 elsewhere)
std::vector<float> prompt_attention_mass(const FptModel& model, int side_layer,
                                         const SelectedFeatures& sel, int64_t grid);
std::vector<float> uniform_selection_mass(const SelectedFeatures& sel, int64_t grid);

// grid×grid PGM, cells max-normalized to 255
void export_selection_map(const std::vector<float>& cell_mass, int64_t grid,
                          const std::string& out_pgm);
// boolean raster: 255 on selected cells
void export_selection_mask(const SelectedFeatures& sel, int64_t grid,
                           const std::string& out_pgm);

}  // namespace fpt
