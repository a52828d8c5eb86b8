#pragma once

// Binary tensor container shared by checkpoints and prepared feature stores.
//
// Layout (all integers little-endian):
//   8 bytes   magic "MDCKPT01"
//   u32       header length H
//   H bytes   UTF-8 JSON header
//   u32       record count
//   records:  u16 name length, name bytes, u8 dtype (1 = float32, 2 = float64),
//             u8 ndim (always 2), u32 rows, u32 cols, rows*cols values row-major

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"

namespace motiondiff {

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

struct TensorRecord {
  std::string name;
  Matrix value;
  DType dtype = DType::Float64;
};

struct TensorFile {
  nlohmann::json header = nlohmann::json::object();
  std::vector<TensorRecord> records;

  const TensorRecord* find(std::string_view name) const;
};

std::string encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(std::string_view bytes);

std::string read_binary_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

}  // namespace motiondiff
