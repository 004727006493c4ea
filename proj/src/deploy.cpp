#include "robuq/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "robuq/error.hpp"
#include "robuq/tensorio.hpp"

namespace robuq {

namespace {

constexpr char kPackedMagic[4] = {'R', 'B', 'Q', 'P'};

bool valid_activation_bits(int b) { return (b >= 1 && b <= 8) || b == 32; }

}  // namespace

PackedTernary pack_ternary(std::span<const std::int8_t> values) {
  PackedTernary p;
  p.count = values.size();
  p.bytes.reserve((values.size() + kTernaryPerByte - 1) / kTernaryPerByte);
  for (std::size_t base = 0; base < values.size(); base += kTernaryPerByte) {
    unsigned byte = 0;
    unsigned place = 1;
    for (std::size_t i = 0; i < kTernaryPerByte; ++i, place *= 3) {
      int digit = 1;
      if (base + i < values.size()) {
        const int v = values[base + i];
        if (v < -1 || v > 1) {
          throw ValidationError("pack_ternary: value " + std::to_string(v) + " at index " + std::to_string(base + i) +
                                " is not ternary");
        }
        digit = v + 1;
      }
      byte += static_cast<unsigned>(digit) * place;
    }
    p.bytes.push_back(static_cast<std::uint8_t>(byte));
  }
  return p;
}

std::vector<std::int8_t> unpack_ternary(const PackedTernary& p) {
  const std::uint64_t need = (p.count + kTernaryPerByte - 1) / kTernaryPerByte;
  if (p.bytes.size() != need) {
    throw FormatError("unpack_ternary: " + std::to_string(p.bytes.size()) + " bytes cannot hold exactly " +
                      std::to_string(p.count) + " values");
  }
  std::vector<std::int8_t> out;
  out.reserve(p.count);
  for (std::size_t k = 0; k < p.bytes.size(); ++k) {
    unsigned byte = p.bytes[k];
    if (byte > kMaxPackedByte) throw FormatError("unpack_ternary: byte " + std::to_string(byte) + " exceeds 242");
    for (std::size_t i = 0; i < kTernaryPerByte && out.size() < p.count; ++i) {
      out.push_back(static_cast<std::int8_t>(static_cast<int>(byte % 3) - 1));
      byte /= 3;
    }
  }
  return out;
}

void save_packed(const PackedTernary& p, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string(), "cannot open for writing");
  f.write(kPackedMagic, 4);
  unsigned char count[8];
  for (int i = 0; i < 8; ++i) count[i] = static_cast<unsigned char>((p.count >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(count), 8);
  f.write(reinterpret_cast<const char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
  if (!f) throw IoError(path.string(), "write failed");
}

PackedTernary load_packed(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string(), "cannot open for reading");
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() < 12 || !std::equal(kPackedMagic, kPackedMagic + 4, raw.begin())) {
    throw FormatError(path.string() + ": not an RBQP file");
  }
  PackedTernary p;
  for (int i = 0; i < 8; ++i) p.count |= static_cast<std::uint64_t>(raw[4 + i]) << (8 * i);
  p.bytes.assign(raw.begin() + 12, raw.end());
  if (p.bytes.size() != (p.count + kTernaryPerByte - 1) / kTernaryPerByte) {
    throw FormatError(path.string() + ": payload length does not match count " + std::to_string(p.count));
  }
  for (auto b : p.bytes)
    if (b > kMaxPackedByte) throw FormatError(path.string() + ": byte value above 242");
  return p;
}

std::string WeightBits::label() const { return ternary ? "1.58" : std::to_string(bits); }

double weighted_flops(double fp_flops, WeightBits w, int a_bits) {
  if (!(fp_flops >= 0.0) || !std::isfinite(fp_flops)) throw ValidationError("weighted_flops: FLOPs must be >= 0");
  if (!valid_activation_bits(a_bits)) {
    throw ValidationError("weighted_flops: unsupported activation bits " + std::to_string(a_bits));
  }
  if (w.ternary) return fp_flops * a_bits / 32.0;
  if (w.bits == 32 && a_bits == 32) return fp_flops;
  if (w.bits == a_bits && w.bits <= 8) return fp_flops * 2.0 * a_bits / 32.0;
  throw ValidationError("weighted_flops: unsupported precision W" + w.label() + "A" + std::to_string(a_bits));
}

FlopsReport model_flops(const FlopsConfig& config) {
  FlopsReport r;
  for (const auto& e : config.entries) {
    FlopsRow row;
    row.name = e.name;
    row.fp_gflops = e.fp_gflops;
    row.weighted_gflops = weighted_flops(e.fp_gflops, e.w, e.a_bits);
    row.precision = e.w.label() + "/" + std::to_string(e.a_bits);
    r.total_fp_gflops += row.fp_gflops;
    r.total_gflops += row.weighted_gflops;
    r.rows.push_back(std::move(row));
  }
  return r;
}

FlopsConfig parse_flops_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("flops config: ") + e.what());
  }
  FlopsConfig c;
  try {
    c.model = j.value("model", "");
    for (const auto& item : j.at("entries")) {
      FlopsEntry e;
      e.name = item.at("name").get<std::string>();
      e.fp_gflops = item.at("fp_gflops").get<double>();
      const auto& wb = item.at("w_bits");
      if (wb.is_string()) {
        if (wb.get<std::string>() != "ternary") throw FormatError("flops config: w_bits string must be \"ternary\"");
        e.w = WeightBits::ternary_weights();
      } else {
        e.w = WeightBits::of(wb.get<int>());
      }
      e.a_bits = item.at("a_bits").get<int>();
      (void)weighted_flops(e.fp_gflops, e.w, e.a_bits);  // reject bad combos at load time
      c.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("flops config: ") + e.what());
  }
  return c;
}

FlopsConfig load_flops_config(const std::filesystem::path& path) { return parse_flops_config(read_text_file(path)); }

std::string format_flops_table(const FlopsReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %8s %14s %14s\n", "class", "W/A", "FP GFLOPs", "GFLOPs");
  out += line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-24s %8s %14.4f %14.4f\n", row.name.c_str(), row.precision.c_str(),
                  row.fp_gflops, row.weighted_gflops);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-24s %8s %14.4f %14.4f\n", "hadamard (online)", "-", 0.0, 0.0);
  out += line;
  std::snprintf(line, sizeof line, "%-24s %8s %14.4f %14.4f\n", "total", "", r.total_fp_gflops, r.total_gflops);
  out += line;
  std::snprintf(line, sizeof line, "total %.2f G\n", r.total_gflops);
  out += line;
  return out;
}

std::string flops_report_json(const FlopsReport& r) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"name", row.name},
                         {"precision", row.precision},
                         {"fp_gflops", row.fp_gflops},
                         {"gflops", row.weighted_gflops}});
  }
  j["total_fp_gflops"] = r.total_fp_gflops;
  j["total_gflops"] = r.total_gflops;
  return j.dump(2) + "\n";
}

}  // namespace robuq
