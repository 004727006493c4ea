#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "robuq/tensorio.hpp"

using namespace robuq;

namespace {

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

MatrixF32 random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  MatrixF32 m(r, c);
  for (float& v : m.data()) v = d(rng);
  return m;
}

bool bitwise_equal(const MatrixF32& a, const MatrixF32& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_SUITE("tensorio") {

TEST_CASE("1x1 zero matrix writes a 16-byte file with an all-zero payload") {
  const auto dir = oracle::temp_dir("tio");
  const auto p = dir / "z.rbq";
  save_matrix(MatrixF32(1, 1), p);
  const auto bytes = file_bytes(p);
  REQUIRE(bytes.size() == 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RBQ1");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 1);
  for (int i = 12; i < 16; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("header stores dims little-endian and values as LE float32") {
  const auto p = oracle::temp_dir("tio") / "h.rbq";
  MatrixF32 m(2, 3, {1.0f, -2.0f, 0.5f, 3.0f, 4.0f, 5.0f});
  save_matrix(m, p);
  const auto b = file_bytes(p);
  REQUIRE(b.size() == rbq1_file_size(2, 3));
  CHECK(b[4] == 2);
  CHECK(b[5] == 0);
  CHECK(b[8] == 3);
  // 1.0f = 0x3f800000, little endian.
  CHECK(b[12] == 0x00);
  CHECK(b[13] == 0x00);
  CHECK(b[14] == 0x80);
  CHECK(b[15] == 0x3f);
}

TEST_CASE("round trips are bitwise exact") {
  const auto dir = oracle::temp_dir("tio");
  const auto id = MatrixF32::identity(2);
  save_matrix(id, dir / "id.rbq");
  CHECK(bitwise_equal(load_matrix(dir / "id.rbq"), id));

  for (auto [r, c] : {std::pair{64u, 64u}, std::pair{3u, 5u}, std::pair{0u, 7u}, std::pair{0u, 0u}}) {
    const auto m = random_matrix(r, c, 7 + r);
    save_matrix(m, dir / "r.rbq");
    CHECK(bitwise_equal(load_matrix(dir / "r.rbq"), m));
    CHECK(std::filesystem::file_size(dir / "r.rbq") == 12 + 4 * r * c);
  }
}

TEST_CASE("load rejects bad magic, truncation and non-finite values") {
  const auto dir = oracle::temp_dir("tio");
  {
    std::ofstream f(dir / "bad.rbq", std::ios::binary);
    f << "XXXX" << std::string(12, '\0');
  }
  CHECK_THROWS_AS(load_matrix(dir / "bad.rbq"), FormatError);

  save_matrix(random_matrix(4, 4, 1), dir / "t.rbq");
  std::filesystem::resize_file(dir / "t.rbq", 12 + 4 * 15);
  CHECK_THROWS_AS(load_matrix(dir / "t.rbq"), FormatError);

  MatrixF32 nan(1, 2, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  save_matrix(nan, dir / "nan.rbq");
  CHECK_THROWS_AS(load_matrix(dir / "nan.rbq"), ValidationError);
  MatrixF32 inf(1, 1, {std::numeric_limits<float>::infinity()});
  save_matrix(inf, dir / "inf.rbq");
  CHECK_THROWS_AS(load_matrix(dir / "inf.rbq"), ValidationError);
}

TEST_CASE("io failures carry the path") {
  const std::filesystem::path p = "/nonexistent_dir_robuq/x.rbq";
  try {
    load_matrix(p);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.path() == p.string());
  }
  CHECK_THROWS_AS(save_matrix(MatrixF32(1, 1), p), IoError);
}

TEST_CASE("matrix construction validates the data length") {
  CHECK_THROWS_AS(MatrixF32(2, 2, {1.0f, 2.0f, 3.0f}), DimensionError);
  CHECK(MatrixF32(2, 2).size() == 4);
}

TEST_CASE("sensitivity CSV: minimal table") {
  const auto t = parse_sensitivity("layer,flops_weight,fixed_bits,dL@1,dL@2\nfc1,1.334,,0.5,0.1\n");
  REQUIRE(t.layers.size() == 1);
  CHECK(t.layers[0].name == "fc1");
  CHECK(t.layers[0].flops_weight == doctest::Approx(1.334));
  CHECK_FALSE(t.layers[0].fixed_bits.has_value());
  CHECK(t.bits == std::vector<int>{1, 2});
  CHECK(t.at(0, 1) == 0.5);
  CHECK(t.at(0, 2) == 0.1);
}

TEST_CASE("sensitivity CSV: missing cell names layer and bit") {
  try {
    parse_sensitivity("layer,flops_weight,fixed_bits,dL@1,dL@2\nqkv,1,,0.5,\n");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("qkv") != std::string::npos);
    CHECK(msg.find("dL@2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_sensitivity("layer,flops,fixed_bits,dL@1\n"), FormatError);
  CHECK_THROWS_AS(parse_sensitivity("layer,flops_weight,fixed_bits,dL@3,dL@2\nx,1,,1,1\n"), ValidationError);
}

TEST_CASE("sensitivity CSV round trip, fixed bits included") {
  SensitivityTable t;
  t.bits = {1, 2, 3, 4};
  LayerSpec a{"attn.qkv", 0, 0, 1.0, std::nullopt};
  LayerSpec b{"attn.scores", 0, 0, 0.02, 8};
  LayerSpec c{"mlp.fc1", 0, 0, 1.334, std::nullopt};
  t.layers = {a, b, c};
  t.delta_loss = MatrixF64(3, 4, {0.9, 0.4, 0.2, 0.1, 1, 1, 1, 1, 0.123456789012345, 1e-9, 3e-17, 0});
  const auto dir = oracle::temp_dir("tio");
  save_sensitivity(t, dir / "s.csv");
  CHECK(load_sensitivity(dir / "s.csv") == t);
}

}  // TEST_SUITE
