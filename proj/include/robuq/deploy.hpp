#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace robuq {

// ---- ternary packing ------------------------------------------------------

inline constexpr std::size_t kTernaryPerByte = 5;
inline constexpr std::uint8_t kMaxPackedByte = 242;  // 3^5 - 1

struct PackedTernary {
  std::vector<std::uint8_t> bytes;
  std::uint64_t count = 0;
};

/// Base-3 digits d = v + 1, first value in the least significant digit. The
/// last group is padded with value 0.
PackedTernary pack_ternary(std::span<const std::int8_t> values);
std::vector<std::int8_t> unpack_ternary(const PackedTernary& packed);

/// "RBQP", count as u64 little endian, then ceil(count / 5) bytes.
void save_packed(const PackedTernary& packed, const std::filesystem::path& path);
PackedTernary load_packed(const std::filesystem::path& path);

// ---- weighted FLOPs -------------------------------------------------------

/// Weight precision of a computation class. Ternary weights are the 1.58-bit case.
struct WeightBits {
  bool ternary = false;
  int bits = 32;

  static WeightBits ternary_weights() { return {true, 0}; }
  static WeightBits of(int b) { return {false, b}; }
  std::string label() const;
};

/// Ternary weights scale by a/32, W=N A=N by 2N/32, full precision by 1.
/// Any other combination throws ValidationError.
double weighted_flops(double fp_flops, WeightBits w, int a_bits);

struct FlopsEntry {
  std::string name;
  double fp_gflops = 0.0;
  WeightBits w;
  int a_bits = 32;
};

struct FlopsConfig {
  std::string model;
  std::vector<FlopsEntry> entries;
};

struct FlopsRow {
  std::string name;
  double fp_gflops = 0.0;
  double weighted_gflops = 0.0;
  std::string precision;  // e.g. "1.58/4"
};

struct FlopsReport {
  std::vector<FlopsRow> rows;
  double total_fp_gflops = 0.0;
  double total_gflops = 0.0;  // online Hadamard transforms counted as zero
};

FlopsReport model_flops(const FlopsConfig& config);

/// {"model": ..., "entries": [{"name", "fp_gflops", "w_bits", "a_bits"}]},
/// with w_bits either an integer or the string "ternary".
FlopsConfig parse_flops_config(const std::string& json_text);
FlopsConfig load_flops_config(const std::filesystem::path& path);
std::string format_flops_table(const FlopsReport& report);
std::string flops_report_json(const FlopsReport& report);

}  // namespace robuq
