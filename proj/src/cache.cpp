#include "fpt/cache.hpp"

#include <cstring>
#include <memory>
#include <stdexcept>

#include "fpt/image.hpp"

namespace fpt {

namespace {

[[noreturn]] void cache_error(const std::string& what) { throw std::runtime_error(what); }

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) cache_error(path + ": truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) cache_error(path + ": truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& is, const std::string& path) {
  uint32_t u = get_u32(is, path);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

constexpr char kMagic[4] = {'F', 'P', 'T', 'C'};
constexpr uint32_t kVersion = 1;
constexpr uint64_t kIndexOffsetPos = 4 + 4 + 28;  // magic, version, fingerprint

void write_fingerprint(std::ostream& os, const CacheFingerprint& fp) {
  put_u32(os, fp.high_res);
  put_u32(os, fp.patch);
  put_u32(os, fp.depth_m);
  put_u32(os, fp.depth_s);
  put_u32(os, fp.dim_m);
  put_u32(os, fp.heads);
  put_f32(os, fp.token_ratio);
}

CacheFingerprint read_fingerprint(std::istream& is, const std::string& path) {
  CacheFingerprint fp;
  fp.high_res = get_u32(is, path);
  fp.patch = get_u32(is, path);
  fp.depth_m = get_u32(is, path);
  fp.depth_s = get_u32(is, path);
  fp.dim_m = get_u32(is, path);
  fp.heads = get_u32(is, path);
  fp.token_ratio = get_f32(is, path);
  return fp;
}

}  // namespace

bool CacheFingerprint::operator==(const CacheFingerprint& o) const {
  return high_res == o.high_res && patch == o.patch && depth_m == o.depth_m &&
         depth_s == o.depth_s && dim_m == o.dim_m && heads == o.heads &&
         token_ratio == o.token_ratio;
}

CacheFingerprint cache_fingerprint(const FptConfig& cfg) {
  CacheFingerprint fp;
  fp.high_res = static_cast<uint32_t>(cfg.high_res);
  fp.patch = static_cast<uint32_t>(cfg.patch);
  fp.depth_m = static_cast<uint32_t>(cfg.L_M);
  fp.depth_s = static_cast<uint32_t>(cfg.L_S);
  fp.dim_m = static_cast<uint32_t>(cfg.D_M);
  fp.heads = static_cast<uint32_t>(cfg.H);
  fp.token_ratio = static_cast<float>(cfg.token_ratio);
  return fp;
}

CacheWriter::CacheWriter(const std::string& path, const CacheFingerprint& fp)
    : path_(path), os_(path, std::ios::binary | std::ios::trunc) {
  if (!os_) cache_error(path + ": cannot open for write");
  os_.write(kMagic, 4);
  put_u32(os_, kVersion);
  write_fingerprint(os_, fp);
  put_u64(os_, 0);  // index offset, patched by finalize()
}

void CacheWriter::write_record(const std::string& id, const std::vector<SelectedFeatures>& layers) {
  if (finalized_) cache_error(path_ + ": writer already finalized");
  index_.emplace_back(id, static_cast<uint64_t>(os_.tellp()));
  for (const auto& sel : layers) {
    put_u32(os_, static_cast<uint32_t>(sel.indices.size()));
    for (int idx : sel.indices) put_u32(os_, static_cast<uint32_t>(idx));
    os_.write(reinterpret_cast<const char*>(sel.keys.data()),
              static_cast<std::streamsize>(sel.keys.numel() * 4));
    os_.write(reinterpret_cast<const char*>(sel.values.data()),
              static_cast<std::streamsize>(sel.values.numel() * 4));
  }
  if (!os_) cache_error(path_ + ": write failed");
}

void CacheWriter::finalize() {
  if (finalized_) return;
  uint64_t index_offset = static_cast<uint64_t>(os_.tellp());
  put_u32(os_, static_cast<uint32_t>(index_.size()));
  for (const auto& [id, off] : index_) {
    put_u32(os_, static_cast<uint32_t>(id.size()));
    os_.write(id.data(), static_cast<std::streamsize>(id.size()));
    put_u64(os_, off);
  }
  os_.seekp(static_cast<std::streamoff>(kIndexOffsetPos));
  put_u64(os_, index_offset);
  os_.flush();
  if (!os_) cache_error(path_ + ": finalize failed");
  finalized_ = true;
}

CacheFile CacheFile::open(const std::string& path) {
  CacheFile cf;
  cf.path_ = path;
  cf.is_.open(path, std::ios::binary);
  if (!cf.is_) cache_error(path + ": cannot open");
  char magic[4];
  cf.is_.read(magic, 4);
  if (!cf.is_ || std::memcmp(magic, kMagic, 4) != 0) cache_error(path + ": not a cache file");
  uint32_t version = get_u32(cf.is_, path);
  if (version != kVersion) cache_error(path + ": unsupported version");
  cf.fp_ = read_fingerprint(cf.is_, path);
  uint64_t index_offset = get_u64(cf.is_, path);
  cf.is_.seekg(static_cast<std::streamoff>(index_offset));
  uint32_t count = get_u32(cf.is_, path);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = get_u32(cf.is_, path);
    std::string id(len, '\0');
    cf.is_.read(id.data(), len);
    if (!cf.is_) cache_error(path + ": truncated index");
    uint64_t off = get_u64(cf.is_, path);
    cf.ids_.push_back(id);
    cf.offsets_[id] = off;
  }
  return cf;
}

bool CacheFile::contains(const std::string& id) const { return offsets_.count(id) != 0; }

std::vector<SelectedFeatures> CacheFile::load_record(const std::string& id) const {
  auto it = offsets_.find(id);
  if (it == offsets_.end()) cache_error(path_ + ": no record for '" + id + "'");
  is_.clear();
  is_.seekg(static_cast<std::streamoff>(it->second));
  int64_t H = fp_.heads;
  int64_t d_h = fp_.dim_m / fp_.heads;
  std::vector<SelectedFeatures> layers;
  for (uint32_t l = 1; l <= fp_.depth_s; ++l) {
    SelectedFeatures sel;
    sel.layer_index = static_cast<int>(fp_.depth_m - fp_.depth_s + l);
    uint32_t n_sel = get_u32(is_, path_);
    sel.indices.resize(n_sel);
    for (uint32_t i = 0; i < n_sel; ++i)
      sel.indices[i] = static_cast<int>(get_u32(is_, path_));
    sel.keys = Tensor::empty({H, static_cast<int64_t>(n_sel), d_h});
    sel.values = Tensor::empty({H, static_cast<int64_t>(n_sel), d_h});
    is_.read(reinterpret_cast<char*>(sel.keys.data()),
             static_cast<std::streamsize>(sel.keys.numel() * 4));
    is_.read(reinterpret_cast<char*>(sel.values.data()),
             static_cast<std::streamsize>(sel.values.numel() * 4));
    if (!is_) cache_error(path_ + ": truncated record for '" + id + "'");
    layers.push_back(std::move(sel));
  }
  return layers;
}

void CacheFile::check_config(const FptConfig& cfg) const {
  if (!(fp_ == cache_fingerprint(cfg)))
    cache_error(path_ + ": cache fingerprint does not match the live config");
}

PreloadResult preload(const Dataset& ds, const ViTWeights& lpm, const FptConfig& cfg,
                      const std::string& out_path, const PreloadOptions& opt) {
  cfg.validate();
  ViTConfig want = cfg.lpm_config();
  if (lpm.cfg.image_size != want.image_size || lpm.cfg.patch != want.patch ||
      lpm.cfg.layers != want.layers || lpm.cfg.dim != want.dim || lpm.cfg.heads != want.heads)
    throw std::invalid_argument("preload: weights do not match the config's backbone shape");
  if (opt.batch < 1) throw std::invalid_argument("preload: batch must be >= 1");

  CacheWriter writer(out_path, cache_fingerprint(cfg));
  std::unique_ptr<CacheWriter> rnd_writer;
  if (!opt.random_out.empty())
    rnd_writer = std::make_unique<CacheWriter>(opt.random_out, cache_fingerprint(cfg));

  PreloadResult res;
  std::set<int> taps = cfg.tapped_layers();
  std::vector<Tensor> images;
  std::vector<size_t> pending;

  auto flush = [&]() {
    if (images.empty()) return;
    int64_t B = static_cast<int64_t>(images.size());
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : images) ptrs.push_back(&t);
    std::vector<std::vector<SelectedFeatures>> recs(images.size());
    std::vector<std::vector<SelectedFeatures>> rnd_recs(rnd_writer ? images.size() : 0);
    auto sink = [&](int layer_index, const Tensor& attn, const Tensor& keys,
                    const Tensor& values, int64_t bb, int64_t n) {
      int64_t H = cfg.H;
      int64_t n_patch = n - 1;
      for (int64_t b = 0; b < bb; ++b) {
        std::vector<float> scores = importance_scores_block(
            attn.data() + b * H * n * n, H, n, /*class_token_present=*/true);
        SelectedFeatures sel;
        sel.layer_index = layer_index;
        sel.indices = select_important(scores, cfg.token_ratio);
        sel.keys = gather_selected(keys, b, H, sel.indices, true);
        sel.values = gather_selected(values, b, H, sel.indices, true);
        recs[static_cast<size_t>(b)].push_back(std::move(sel));
        if (rnd_writer) {
          const std::string& id = ds.items[pending[static_cast<size_t>(b)]].file;
          uint64_t s = splitmix64_mix(opt.random_seed ^ fnv1a(id) ^
                                      (static_cast<uint64_t>(layer_index) * 0x9E3779B97F4A7C15ULL));
          SelectedFeatures rnd;
          rnd.layer_index = layer_index;
          rnd.indices = select_random(n_patch, cfg.token_ratio, s);
          rnd.keys = gather_selected(keys, b, H, rnd.indices, true);
          rnd.values = gather_selected(values, b, H, rnd.indices, true);
          rnd_recs[static_cast<size_t>(b)].push_back(std::move(rnd));
        }
      }
    };
    lpm_forward_batched(ptrs, lpm, taps, sink);
    for (size_t b = 0; b < images.size(); ++b) {
      const std::string& id = ds.items[pending[b]].file;
      writer.write_record(id, recs[b]);
      res.written += 1;
      if (rnd_writer) rnd_writer->write_record(id, rnd_recs[b]);
    }
    images.clear();
    pending.clear();
  };

  for (size_t i = 0; i < ds.items.size(); ++i) {
    try {
      Image img = load_image(ds.path_of(i));
      if (img.c != cfg.channels)
        throw std::runtime_error(ds.items[i].file + ": expected " +
                                 std::to_string(cfg.channels) + " channels, got " +
                                 std::to_string(img.c));
      if (img.h != cfg.high_res || img.w != cfg.high_res)
        img = resize_bilinear(img, 0.0, 0.0, static_cast<double>(img.h),
                              static_cast<double>(img.w), cfg.high_res, cfg.high_res);
      images.push_back(image_to_tensor(img));
      pending.push_back(i);
    } catch (const std::exception& e) {
      res.errors.emplace_back(ds.items[i].file + ": " + e.what());
    }
    if (static_cast<int>(images.size()) == opt.batch) flush();
  }
  flush();
  writer.finalize();
  if (rnd_writer) rnd_writer->finalize();
  return res;
}

}  // namespace fpt
