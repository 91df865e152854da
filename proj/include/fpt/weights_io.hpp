#pragma once

#include <map>
#include <string>

#include "fpt/tensor.hpp"

namespace fpt {

// "FPTW" v1: named f32 tensors, little-endian.
// header: magic, u32 version, u32 count;
// entry:  u32 name_len, name bytes, u8 dtype(0=f32), u8 rank, rank×u64 dims, payload.
// Entries are written in ascending name order so files are byte-deterministic.
void save_weights(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_weights(const std::string& path);

}  // namespace fpt
