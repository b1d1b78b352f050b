#include <doctest.h>

#include <cstring>

#include "afformer/error.hpp"
#include "afformer/tensor_io.hpp"
#include "helpers.hpp"

using namespace afformer;

namespace {

Tensor sample_tensor() {
  Tensor t;
  t.dims = {2, 3};
  t.values = {1.0, -2.5, 3.25, 1e-300, -0.0, 6.0};
  return t;
}

}  // namespace

TEST_CASE("header layout") {
  const std::vector<std::uint8_t> b = encode_tensor(sample_tensor());
  REQUIRE(b.size() == 8 + 2 * 8 + 6 * 8);
  CHECK(std::memcmp(b.data(), "AFTN", 4) == 0);
  CHECK(b[4] == 1);  // version
  CHECK(b[5] == 1);  // f64
  CHECK(b[6] == 2);  // rank
  CHECK(b[7] == 0);  // padding
  // dims little-endian
  CHECK(b[8] == 2);
  for (int i = 9; i < 16; ++i) CHECK(b[i] == 0);
  CHECK(b[16] == 3);
  // first value 1.0 = 0x3FF0000000000000 little-endian
  CHECK(b[24 + 7] == 0x3F);
  CHECK(b[24 + 6] == 0xF0);
}

TEST_CASE("f64 round trip is bit-exact") {
  const Tensor t = sample_tensor();
  const Tensor back = decode_tensor(encode_tensor(t));
  CHECK(back.dims == t.dims);
  CHECK(back.dtype == DType::F64);
  REQUIRE(back.values.size() == t.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    CHECK(std::memcmp(&back.values[i], &t.values[i], sizeof(double)) == 0);
  }
  CHECK(encode_tensor(back) == encode_tensor(t));
}

TEST_CASE("f32 tensors round through float") {
  Tensor t;
  t.dims = {3};
  t.dtype = DType::F32;
  t.values = {0.1, 1.5, -3.0};
  const std::vector<std::uint8_t> b = encode_tensor(t);
  CHECK(b.size() == 8 + 8 + 3 * 4);
  CHECK(b[5] == 0);
  const Tensor back = decode_tensor(b);
  CHECK(back.values[0] == static_cast<double>(0.1f));
  CHECK(back.values[1] == 1.5);
  CHECK(back.values[2] == -3.0);
}

TEST_CASE("rank 0 tensor holds one scalar") {
  Tensor t;
  t.values = {42.0};
  CHECK(t.element_count() == 1);
  CHECK(decode_tensor(encode_tensor(t)).values == std::vector<double>{42.0});
}

TEST_CASE("encoding rejects inconsistent tensors") {
  Tensor t;
  t.dims = {2, 2};
  t.values = {1, 2, 3};
  CHECK_THROWS_AS(encode_tensor(t), DimensionError);
}

TEST_CASE("malformed bytes name the source and byte offset") {
  const std::vector<std::uint8_t> good = encode_tensor(sample_tensor());
  auto offset_of = [](std::vector<std::uint8_t> bytes) -> std::uint64_t {
    try {
      decode_tensor(bytes, "x.aftn");
    } catch (const FormatError& e) {
      CHECK(e.file() == "x.aftn");
      CHECK(std::string(e.what()).find("x.aftn") != std::string::npos);
      return e.offset();
    }
    FAIL("no error raised");
    return 0;
  };
  auto bad_magic = good;
  bad_magic[2] = 'X';
  CHECK(offset_of(bad_magic) == 2);
  auto bad_version = good;
  bad_version[4] = 2;
  CHECK(offset_of(bad_version) == 4);
  auto bad_dtype = good;
  bad_dtype[5] = 7;
  CHECK(offset_of(bad_dtype) == 5);
  auto bad_pad = good;
  bad_pad[7] = 1;
  CHECK(offset_of(bad_pad) == 7);
  CHECK(offset_of({good.begin(), good.begin() + 5}) == 5);
  CHECK(offset_of({good.begin(), good.begin() + 12}) == 12);
  auto short_payload = good;
  short_payload.pop_back();
  CHECK(offset_of(short_payload) == 24);
  auto long_payload = good;
  long_payload.push_back(0);
  CHECK(offset_of(long_payload) == 24);
}

TEST_CASE("file round trip") {
  const auto dir = testing::scratch_dir("tensor_io");
  write_tensor(dir / "t.aftn", sample_tensor());
  CHECK(read_tensor(dir / "t.aftn").values == sample_tensor().values);
  CHECK_THROWS_AS(read_tensor(dir / "missing.aftn"), FormatError);
}
