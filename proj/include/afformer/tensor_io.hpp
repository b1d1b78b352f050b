#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace afformer {

// On-disk tensor container:
//   "AFTN" | u8 version (1) | u8 dtype (0 = f32, 1 = f64) | u8 rank | u8 pad
//   rank x u64 little-endian dims
//   raw little-endian values, row-major
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct Tensor {
  std::vector<std::uint64_t> dims;
  DType dtype = DType::F64;
  // Values are held as f64 regardless of dtype; f32 tensors round on write.
  std::vector<double> values;

  std::uint64_t element_count() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
// `source` names the buffer in error messages.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace afformer
