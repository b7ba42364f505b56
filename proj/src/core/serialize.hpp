#pragma once

#include <filesystem>
#include <string>

#include "core/tensor.hpp"

namespace mstage::io {

// On-disk formats use 32-bit little-endian floats; in-memory stays 64-bit.
//   MSPF: magic "MSPF", version u32, T u32, D u32, T*D f32 row-major
//   MSPP: magic "MSPP", version u32, T u32, C u32, T*C f32 row-major
//   MSCK: magic "MSCK", version u32, then records of
//         (name_len u32, name bytes, rank u32, dims u32 x rank, f32 payload)
inline constexpr uint32_t kFormatVersion = 1;

void write_feature_seq(const std::filesystem::path& path, const Tensor& feats);
Tensor read_feature_seq(const std::filesystem::path& path);

void write_prob_seq(const std::filesystem::path& path, const Tensor& probs);
Tensor read_prob_seq(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const ParamSet& ps);
ParamSet read_checkpoint(const std::filesystem::path& path);

// write-temp-then-rename
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace mstage::io
