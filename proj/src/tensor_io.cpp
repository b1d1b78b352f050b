#include "afformer/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "afformer/error.hpp"

namespace afformer {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'F', 'T', 'N'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 8;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = sizeof(T); i-- > 0;) out.push_back(raw[i]);
  } else {
    out.insert(out.end(), raw, raw + sizeof(T));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = p[sizeof(T) - 1 - i];
  } else {
    std::memcpy(raw, p, sizeof(T));
  }
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw InputError("tensor rank exceeds 255");
  if (t.values.size() != t.element_count()) {
    throw DimensionError("tensor value count does not match dims");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const std::size_t width = t.dtype == DType::F32 ? 4 : 8;
  out.reserve(kHeaderSize + 8 * t.dims.size() + width * t.values.size());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  out.push_back(0);
  for (auto d : t.dims) put_le<std::uint64_t>(out, d);
  for (double v : t.values) {
    if (t.dtype == DType::F32) {
      put_le<float>(out, static_cast<float>(v));
    } else {
      put_le<double>(out, v);
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < kHeaderSize) throw FormatError(source, bytes.size(), "truncated header");
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != kMagic[i]) throw FormatError(source, i, "bad magic, expected AFTN");
  }
  if (bytes[4] != kVersion) {
    throw FormatError(source, 4, "unsupported version " + std::to_string(bytes[4]));
  }
  if (bytes[5] > 1) throw FormatError(source, 5, "unknown dtype " + std::to_string(bytes[5]));
  if (bytes[7] != 0) throw FormatError(source, 7, "nonzero header padding");
  Tensor t;
  t.dtype = static_cast<DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  std::size_t offset = kHeaderSize;
  if (bytes.size() < offset + 8 * rank) throw FormatError(source, bytes.size(), "truncated dims");
  t.dims.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims[i] = get_le<std::uint64_t>(bytes.data() + offset);
    offset += 8;
  }
  const std::size_t width = t.dtype == DType::F32 ? 4 : 8;
  const std::uint64_t count = t.element_count();
  const std::uint64_t need = count * width;
  if (bytes.size() - offset != need) {
    throw FormatError(source, offset,
                      "payload is " + std::to_string(bytes.size() - offset) + " bytes, dims need " +
                          std::to_string(need));
  }
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.values[i] = t.dtype == DType::F32 ? static_cast<double>(get_le<float>(bytes.data() + offset))
                                        : get_le<double>(bytes.data() + offset);
    offset += width;
  }
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_tensor(bytes, path.string());
}

}  // namespace afformer
