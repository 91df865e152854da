#include "fpt/weights_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace fpt {

namespace {

constexpr char kMagic[4] = {'F', 'P', 'T', 'W'};

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

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("weights: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("weights: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_weights(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("weights: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (!t.defined()) throw std::logic_error("weights: undefined tensor " + name);
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(0);  // dtype f32
    os.put(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel()) * 4);
  }
  if (!os) throw std::runtime_error("weights: write failed for " + path);
}

std::map<std::string, Tensor> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weights: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("weights: " + path + " is not an FPTW file");
  uint32_t version = get_u32(is);
  if (version != 1)
    throw std::runtime_error("weights: unsupported version " + std::to_string(version));
  uint32_t count = get_u32(is);
  std::map<std::string, Tensor> out;
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    int dtype = is.get();
    int rank = is.get();
    if (!is || dtype != 0 || rank < 0)
      throw std::runtime_error("weights: corrupt entry header in " + path);
    std::vector<int64_t> shape;
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(get_u64(is)));
    Tensor t = Tensor::empty(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel()) * 4);
    if (!is) throw std::runtime_error("weights: truncated payload in " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace fpt
