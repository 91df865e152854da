#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpt/image.hpp"
#include "fpt/vit.hpp"

namespace fpt {

struct DatasetItem {
  std::string file;   // relative to Dataset::dir
  int label = 0;
  std::string split;  // train / val / test
};

struct Dataset {
  std::string dir;
  std::vector<DatasetItem> items;
  int class_count = 0;

  std::vector<size_t> split_indices(const std::string& split) const;
  std::string path_of(size_t i) const;
};

// labels.csv with header `file,label,split`
Dataset load_dataset(const std::string& dir);
void save_labels(const Dataset& ds);

// Synthetic corpus: smooth low-frequency background; classes >= 1 carry a
// patch-aligned checkerboard stamp (2 px cells, zero mean over any 4x4 block)
// whose fine texture survives at full resolution and cancels under 4x
// downsampling. Class 0 has no stamp.
struct SynthItem {
  int label = 0;
  int64_t stamp_y = -1;  // pixel origin of the stamp, -1 when absent
  int64_t stamp_x = -1;
};

std::vector<SynthItem> synth_plan(uint64_t seed, int64_t n, int classes, int64_t high_res,
                                  int64_t patch = 16);
Image synth_image(uint64_t seed, int64_t index, const SynthItem& item, int64_t high_res,
                  int64_t patch = 16);
Dataset synth_dataset(const std::string& dir, uint64_t seed, int64_t n, int classes,
                      int64_t high_res);

// stamp geometry shared with tests
int64_t synth_stamp_patches();  // stamp side length in patches
float synth_stamp_delta();

// Frozen backbone paired with the synthetic corpus. Starts from random init,
// then turns one attention head per stamp texture into a matched filter: the
// patch embedding gets a template column per texture, those heads use a
// constant query (bias only) and a key that reads the matching column, and
// block output projections are damped so the template coordinates stay
// legible through the residual stream. Attention then concentrates on stamped
// patches at every depth while the rest of the network stays generic.
ViTWeights synth_lpm(const ViTConfig& cfg, uint64_t seed);

}  // namespace fpt
