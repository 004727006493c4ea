#include "robuq/tensorio.hpp"

#include "numfmt.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace robuq {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix<T> out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

namespace {

template <typename T, typename Op>
Matrix<T> elementwise(const Matrix<T>& a, const Matrix<T>& b, Op op, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch");
  }
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = op(a.data()[i], b.data()[i]);
  return out;
}

}  // namespace

template <typename T>
Matrix<T> operator+(const Matrix<T>& a, const Matrix<T>& b) {
  return elementwise(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
Matrix<T> operator-(const Matrix<T>& a, const Matrix<T>& b) {
  return elementwise(a, b, [](T x, T y) { return x - y; }, "subtract");
}

template <typename T>
double frobenius_norm(const Matrix<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

template Matrix<float> matmul(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> transpose(const Matrix<float>&);
template Matrix<double> transpose(const Matrix<double>&);
template Matrix<float> operator+(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> operator+(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> operator-(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> operator-(const Matrix<double>&, const Matrix<double>&);
template double frobenius_norm(const Matrix<float>&);
template double frobenius_norm(const Matrix<double>&);
template double max_abs_diff(const Matrix<float>&, const Matrix<float>&);
template double max_abs_diff(const Matrix<double>&, const Matrix<double>&);

// ---------------------------------------------------------------------------
// RBQ1
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMatrixMagic = {'R', 'B', 'Q', '1'};

void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(path.string(), "read failed");
  return std::move(ss).str();
}

void write_binary(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) { return read_binary(path); }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_binary(path, text);
}

void save_matrix(const MatrixF32& m, const std::filesystem::path& path) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) {
    throw DimensionError("matrix too large for RBQ1");
  }
  std::string bytes;
  bytes.reserve(rbq1_file_size(m.rows(), m.cols()));
  bytes.append(kMatrixMagic.data(), kMatrixMagic.size());
  put_u32le(bytes, static_cast<std::uint32_t>(m.rows()));
  put_u32le(bytes, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.data()) put_u32le(bytes, std::bit_cast<std::uint32_t>(v));
  write_binary(path, bytes);
}

MatrixF32 load_matrix(const std::filesystem::path& path) {
  const std::string bytes = read_binary(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12) throw FormatError("'" + path.string() + "': truncated RBQ1 header");
  if (std::memcmp(bytes.data(), kMatrixMagic.data(), 4) != 0) {
    throw FormatError("'" + path.string() + "': bad magic, expected RBQ1");
  }
  const std::size_t rows = get_u32le(p + 4);
  const std::size_t cols = get_u32le(p + 8);
  if (bytes.size() != rbq1_file_size(rows, cols)) {
    throw FormatError("'" + path.string() + "': payload is " + std::to_string(bytes.size() - 12) +
                      " bytes, expected " + std::to_string(4 * rows * cols));
  }
  std::vector<float> data(rows * cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32le(p + 12 + 4 * i));
    if (!std::isfinite(data[i])) {
      throw ValidationError("'" + path.string() + "': non-finite value at row " +
                            std::to_string(i / std::max<std::size_t>(cols, 1)) + ", col " +
                            std::to_string(i % std::max<std::size_t>(cols, 1)));
    }
  }
  return MatrixF32(rows, cols, std::move(data));
}

// ---------------------------------------------------------------------------
// Sensitivity CSV
// ---------------------------------------------------------------------------

bool is_supported_bit_width(int bits) noexcept { return (bits >= 1 && bits <= 8) || bits == 32; }

std::size_t SensitivityTable::bit_index(int bit) const {
  const auto it = std::find(bits.begin(), bits.end(), bit);
  if (it == bits.end()) throw ValidationError("bit width " + std::to_string(bit) + " not in table");
  return static_cast<std::size_t>(it - bits.begin());
}

double SensitivityTable::at(std::size_t layer, int bit) const { return delta_loss(layer, bit_index(bit)); }

void SensitivityTable::validate() const {
  if (bits.empty()) throw ValidationError("sensitivity table has no bit widths");
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!is_supported_bit_width(bits[i])) {
      throw ValidationError("unsupported bit width " + std::to_string(bits[i]));
    }
    if (i > 0 && bits[i] <= bits[i - 1]) throw ValidationError("bit widths must be strictly increasing");
  }
  if (delta_loss.rows() != layers.size() || delta_loss.cols() != bits.size()) {
    throw DimensionError("sensitivity table shape does not match layers x bits");
  }
  for (const auto& l : layers) {
    if (!(l.flops_weight >= 0.0) || !std::isfinite(l.flops_weight)) {
      throw ValidationError("layer '" + l.name + "' has invalid flops_weight");
    }
    if (l.fixed_bits && !is_supported_bit_width(*l.fixed_bits)) {
      throw ValidationError("layer '" + l.name + "' has unsupported fixed_bits");
    }
  }
  for (double v : delta_loss.data()) {
    if (!std::isfinite(v)) throw ValidationError("sensitivity table contains non-finite entries");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

SensitivityTable parse_sensitivity(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.size() < 4 || header[0] != "layer" || header[1] != "flops_weight" ||
      header[2] != "fixed_bits") {
    throw FormatError("sensitivity CSV header must start with layer,flops_weight,fixed_bits,dL@<b>");
  }
  SensitivityTable table;
  for (std::size_t i = 3; i < header.size(); ++i) {
    int b = 0;
    if (header[i].rfind("dL@", 0) != 0 || !detail::parse_number(header[i].substr(3), b)) {
      throw FormatError("bad sensitivity column '" + header[i] + "', expected dL@<bits>");
    }
    table.bits.push_back(b);
  }
  std::vector<double> cells;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (fields.empty() || fields[0].empty()) throw FormatError("sensitivity row without layer name");
    LayerSpec spec;
    spec.name = fields[0];
    if (fields.size() < 2 || !detail::parse_number(fields[1], spec.flops_weight)) {
      throw FormatError("layer '" + spec.name + "': bad flops_weight");
    }
    if (fields.size() >= 3 && !fields[2].empty()) {
      int fb = 0;
      if (!detail::parse_number(fields[2], fb)) throw FormatError("layer '" + spec.name + "': bad fixed_bits");
      spec.fixed_bits = fb;
    }
    for (std::size_t j = 0; j < table.bits.size(); ++j) {
      const std::size_t col = 3 + j;
      double v = 0.0;
      if (col >= fields.size() || fields[col].empty()) {
        throw FormatError("layer '" + spec.name + "': missing value for dL@" +
                          std::to_string(table.bits[j]));
      }
      if (!detail::parse_number(fields[col], v)) {
        throw FormatError("layer '" + spec.name + "': bad value for dL@" + std::to_string(table.bits[j]));
      }
      cells.push_back(v);
    }
    if (fields.size() > 3 + table.bits.size()) {
      throw FormatError("layer '" + spec.name + "': too many columns");
    }
    table.layers.push_back(std::move(spec));
  }
  table.delta_loss = MatrixF64(table.layers.size(), table.bits.size(), std::move(cells));
  table.validate();
  return table;
}

std::string format_sensitivity(const SensitivityTable& table) {
  table.validate();
  std::string out = "layer,flops_weight,fixed_bits";
  for (int b : table.bits) out += ",dL@" + std::to_string(b);
  out += '\n';
  for (std::size_t i = 0; i < table.layers.size(); ++i) {
    const auto& l = table.layers[i];
    out += l.name + ',' + detail::format_double(l.flops_weight) + ',';
    if (l.fixed_bits) out += std::to_string(*l.fixed_bits);
    for (std::size_t j = 0; j < table.bits.size(); ++j) out += ',' + detail::format_double(table.delta_loss(i, j));
    out += '\n';
  }
  return out;
}

SensitivityTable load_sensitivity(const std::filesystem::path& path) {
  try {
    return parse_sensitivity(read_binary(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

void save_sensitivity(const SensitivityTable& table, const std::filesystem::path& path) {
  write_binary(path, format_sensitivity(table));
}

}  // namespace robuq
