#include "fpt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fpt {

namespace {

constexpr int64_t kStampPatches = 2;  // stamp spans 2x2 patches
constexpr int64_t kCell = 2;          // checkerboard cell in pixels
constexpr float kDelta = 0.25f;

[[noreturn]] void data_error(const std::string& what) { throw std::runtime_error(what); }

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// mean-zero fine textures: any 4x4-aligned block sums to zero for every variant
float stamp_value(int64_t y, int64_t x, int variant) {
  int64_t cy = y / kCell, cx = x / kCell;
  int v = (variant - 1) % 6;
  bool hi;
  switch (v % 3) {
    case 0: hi = ((cy + cx) % 2) == 0; break;  // checker
    case 1: hi = (cy % 2) == 0; break;         // horizontal stripes
    default: hi = (cx % 2) == 0; break;        // vertical stripes
  }
  if (v >= 3) hi = !hi;
  return hi ? kDelta : -kDelta;
}

}  // namespace

std::vector<size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < items.size(); ++i)
    if (items[i].split == split) out.push_back(i);
  return out;
}

std::string Dataset::path_of(size_t i) const { return dir + "/" + items[i].file; }

Dataset load_dataset(const std::string& dir) {
  std::string csv = dir + "/labels.csv";
  std::ifstream is(csv);
  if (!is) data_error(csv + ": cannot open");
  std::string line;
  if (!std::getline(is, line)) data_error(csv + ": empty");
  if (trim(line) != "file,label,split") data_error(csv + ": bad header");
  Dataset ds;
  ds.dir = dir;
  int max_label = -1;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty()) continue;
    std::istringstream ls(t);
    DatasetItem item;
    std::string label_str;
    if (!std::getline(ls, item.file, ',') || !std::getline(ls, label_str, ',') ||
        !std::getline(ls, item.split))
      data_error(csv + ":" + std::to_string(lineno) + ": malformed row");
    item.file = trim(item.file);
    item.split = trim(item.split);
    try {
      item.label = std::stoi(trim(label_str));
    } catch (const std::exception&) {
      data_error(csv + ":" + std::to_string(lineno) + ": bad label");
    }
    if (item.label < 0) data_error(csv + ":" + std::to_string(lineno) + ": negative label");
    max_label = std::max(max_label, item.label);
    ds.items.push_back(std::move(item));
  }
  if (ds.items.empty()) data_error(csv + ": no rows");
  ds.class_count = max_label + 1;
  return ds;
}

void save_labels(const Dataset& ds) {
  std::string csv = ds.dir + "/labels.csv";
  std::ofstream os(csv, std::ios::binary);
  if (!os) data_error(csv + ": cannot open for write");
  os << "file,label,split\n";
  for (const auto& item : ds.items)
    os << item.file << "," << item.label << "," << item.split << "\n";
  if (!os) data_error(csv + ": write failed");
}

std::vector<SynthItem> synth_plan(uint64_t seed, int64_t n, int classes, int64_t high_res,
                                  int64_t patch) {
  if (classes < 1 || n < classes) data_error("synth_plan: need n >= classes >= 1");
  if (high_res % patch != 0) data_error("synth_plan: high_res must be a patch multiple");
  int64_t grid = high_res / patch;
  if (grid < kStampPatches) data_error("synth_plan: image too small for stamp");
  Rng rng(splitmix64_mix(seed ^ fnv1a("plan")));
  std::vector<SynthItem> plan(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    SynthItem& it = plan[static_cast<size_t>(i)];
    it.label = static_cast<int>(i % classes);
    if (it.label >= 1) {
      it.stamp_y = patch * rng.uniform_int(grid - kStampPatches + 1);
      it.stamp_x = patch * rng.uniform_int(grid - kStampPatches + 1);
    }
  }
  return plan;
}

Image synth_image(uint64_t seed, int64_t index, const SynthItem& item, int64_t high_res,
                  int64_t patch) {
  Rng rng(splitmix64_mix(seed ^ fnv1a("img/" + std::to_string(index))));
  Image img;
  img.h = high_res;
  img.w = high_res;
  img.c = 3;
  img.pix.assign(static_cast<size_t>(high_res) * high_res * 3, 0.0f);

  // low-frequency background: a few random plane waves, slight per-channel tint
  constexpr int kWaves = 4;
  double amp[kWaves], fy[kWaves], fx[kWaves], phase[kWaves], tint[kWaves][3];
  for (int j = 0; j < kWaves; ++j) {
    amp[j] = 0.03 + 0.03 * rng.uniform();
    fy[j] = static_cast<double>(rng.uniform_int(4));
    fx[j] = static_cast<double>(rng.uniform_int(4));
    if (fy[j] == 0 && fx[j] == 0) fx[j] = 1;
    phase[j] = 2.0 * M_PI * rng.uniform();
    for (int ch = 0; ch < 3; ++ch) tint[j][ch] = 0.8 + 0.2 * rng.uniform();
  }
  double inv = 1.0 / static_cast<double>(high_res);
  for (int64_t y = 0; y < high_res; ++y) {
    for (int64_t x = 0; x < high_res; ++x) {
      double base[3] = {0.5, 0.5, 0.5};
      for (int j = 0; j < kWaves; ++j) {
        double wave = amp[j] * std::cos(2.0 * M_PI * (fy[j] * y + fx[j] * x) * inv + phase[j]);
        for (int ch = 0; ch < 3; ++ch) base[ch] += wave * tint[j][ch];
      }
      for (int64_t ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = static_cast<float>(base[ch]);
    }
  }
  if (item.stamp_y >= 0) {
    int64_t side = kStampPatches * patch;
    for (int64_t dy = 0; dy < side; ++dy)
      for (int64_t dx = 0; dx < side; ++dx) {
        float s = stamp_value(dy, dx, item.label);
        for (int64_t ch = 0; ch < 3; ++ch) {
          float& p = img.at(item.stamp_y + dy, item.stamp_x + dx, ch);
          p = std::clamp(p + s, 0.0f, 1.0f);
        }
      }
  }
  for (auto& p : img.pix) p = std::clamp(p, 0.0f, 1.0f);
  return img;
}

Dataset synth_dataset(const std::string& dir, uint64_t seed, int64_t n, int classes,
                      int64_t high_res) {
  std::filesystem::create_directories(dir);
  auto plan = synth_plan(seed, n, classes, high_res);
  Dataset ds;
  ds.dir = dir;
  ds.class_count = classes;
  int64_t n_train = (n * 4) / 5;
  for (int64_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05lld.ppm", static_cast<long long>(i));
    Image img = synth_image(seed, i, plan[static_cast<size_t>(i)], high_res);
    save_ppm(dir + "/" + name, img);
    DatasetItem item;
    item.file = name;
    item.label = plan[static_cast<size_t>(i)].label;
    item.split = i < n_train ? "train" : "test";
    ds.items.push_back(std::move(item));
  }
  save_labels(ds);
  return ds;
}

int64_t synth_stamp_patches() { return kStampPatches; }
float synth_stamp_delta() { return kDelta; }

ViTWeights synth_lpm(const ViTConfig& cfg, uint64_t seed) {
  if (cfg.patch % (2 * kCell) != 0)
    throw std::invalid_argument("synth_lpm: patch must be a multiple of the stamp period");
  ViTWeights w = ViTWeights::init(cfg, Rng(splitmix64_mix(seed ^ fnv1a("synth-lpm"))));
  int64_t D = cfg.dim, H = cfg.heads, d_h = D / H, P = cfg.patch, C = cfg.channels;
  int64_t pd = cfg.patch_dim();
  int64_t n_t = std::min<int64_t>(6, std::min(H, D));  // one filter head per texture
  // Template column t responds ~3.0 to a stamped patch under (x-0.5)/0.5 input
  // normalization; the smooth background is killed by the zero-mean pattern.
  const float gain = 6.0f / static_cast<float>(pd);
  for (int64_t t = 0; t < n_t; ++t) {
    for (int64_t i = 0; i < pd; ++i) {
      int64_t dy = i / (P * C), dx = (i / C) % P;
      float s = stamp_value(dy, dx, static_cast<int>(t) + 1) / kDelta;  // +-1 pattern
      w.patch_w.data()[i * D + t] = gain * s;
    }
    w.patch_b.data()[t] = 0.0f;
    w.cls.data()[t] = 0.0f;
    for (int64_t r = 0; r < w.pos.dim(0); ++r) w.pos.data()[r * D + t] = 0.0f;
  }
  const float beta = 3.1f, kappa = 3.1f;  // filter score = beta*kappa*LN(z)[t]/sqrt(d_h)
  for (auto& blk : w.blocks) {
    // damp residual updates so the template coordinates survive to depth
    for (int64_t i = 0; i < blk.proj_w.numel(); ++i) blk.proj_w.data()[i] *= 0.2f;
    for (int64_t i = 0; i < blk.fc2_w.numel(); ++i) blk.fc2_w.data()[i] *= 0.2f;
    float* qw = blk.qkv_w.data();  // [D, 3D]: columns q | k | v
    float* qb = blk.qkv_b.data();
    for (int64_t t = 0; t < n_t; ++t) {
      for (int64_t r = 0; r < D; ++r)
        for (int64_t d = 0; d < d_h; ++d) {
          qw[r * 3 * D + t * d_h + d] = 0.0f;      // query: constant, bias only
          qw[r * 3 * D + D + t * d_h + d] = 0.0f;  // key: cleared, single read below
        }
      for (int64_t d = 0; d < d_h; ++d) {
        qb[t * d_h + d] = 0.0f;
        qb[D + t * d_h + d] = 0.0f;
      }
      qb[t * d_h] = beta;
      qw[t * 3 * D + D + t * d_h] = kappa;  // k[0] = kappa * LN(z)[t]
    }
  }
  return w;
}

}  // namespace fpt
