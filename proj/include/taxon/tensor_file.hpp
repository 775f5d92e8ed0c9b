#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "taxon/tensor.hpp"

namespace taxon {

using TensorMap = std::map<std::string, Tensor>;

enum class TensorDType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

/// Named tensor map plus a JSON metadata block.
///
/// Layout, all integers little-endian:
///   magic "TAXONTM\0" | u32 version | u64 len, metadata JSON
///   | u64 tensor count | per tensor: u32 len, name | u8 dtype | u32 rank
///   | u64 dims[rank] | raw little-endian values
///   | u64 FNV-1a checksum of every preceding byte
struct TensorFile {
  nlohmann::json metadata = nlohmann::json::object();
  TensorMap tensors;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

/// float64 storage is lossless for the in-memory parameters; float32 is
/// accepted for exchanging weights with other tools.
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file,
                       TensorDType dtype = TensorDType::kFloat64);

/// Throws LoadError on truncation, checksum mismatch, bad magic or version.
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace taxon
