#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fpt/adapter.hpp"
#include "fpt/data.hpp"

namespace fpt {

struct CacheFingerprint {
  uint32_t high_res = 0;
  uint32_t patch = 0;
  uint32_t depth_m = 0;   // L_M
  uint32_t depth_s = 0;   // L_S
  uint32_t dim_m = 0;     // D_M
  uint32_t heads = 0;
  float token_ratio = 0.0f;

  bool operator==(const CacheFingerprint& o) const;
};

CacheFingerprint cache_fingerprint(const FptConfig& cfg);

// On-disk layout (all little-endian):
//   "FPTC" | u32 version | fingerprint (6×u32, f32) | u64 index_offset
//   records ... each: per fused layer ascending (layer ids derive from the
//   fingerprint): u32 n_sel | n_sel×u32 indices | K f32[H·n_sel·d_h] | V f32[...]
//   index: u32 count | count × (u32 id_len | id bytes | u64 offset)
class CacheWriter {
 public:
  CacheWriter(const std::string& path, const CacheFingerprint& fp);
  void write_record(const std::string& id, const std::vector<SelectedFeatures>& layers);
  void finalize();

 private:
  std::string path_;
  std::ofstream os_;
  std::vector<std::pair<std::string, uint64_t>> index_;
  bool finalized_ = false;
};

class CacheFile {
 public:
  static CacheFile open(const std::string& path);

  const CacheFingerprint& fingerprint() const { return fp_; }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const;
  std::vector<SelectedFeatures> load_record(const std::string& id) const;
  void check_config(const FptConfig& cfg) const;  // throws on fingerprint mismatch

 private:
  std::string path_;
  CacheFingerprint fp_;
  std::vector<std::string> ids_;
  std::map<std::string, uint64_t> offsets_;
  mutable std::ifstream is_;
};

struct PreloadOptions {
  int batch = 4;
  std::string random_out;  // when set, also emit a random-selection cache
  uint64_t random_seed = 0;
};

struct PreloadResult {
  std::vector<std::string> errors;  // per-item failures ("file: reason")
  int64_t written = 0;
};

// One frozen pass over every dataset item: bilinear resize to high_res,
// normalize, tap the fused layers, select, store K/V. Unreadable items are
// skipped and reported; the cache stays valid for the rest.
PreloadResult preload(const Dataset& ds, const ViTWeights& lpm, const FptConfig& cfg,
                      const std::string& out_path, const PreloadOptions& opt = {});

}  // namespace fpt
