#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robuq/error.hpp"

namespace robuq {

/// Dense row-major matrix. `MatrixF32` is the storage and file type; the
/// double instantiation is used for accumulation-heavy numerics.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T{}) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  template <typename U>
  static Matrix cast(const Matrix<U>& other) {
    Matrix m(other.rows(), other.cols());
    for (std::size_t i = 0; i < other.size(); ++i) m.data_[i] = static_cast<T>(other.data()[i]);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF32 = Matrix<float>;
using MatrixF64 = Matrix<double>;

// Small dense helpers. All products accumulate in double.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);
template <typename T>
Matrix<T> transpose(const Matrix<T>& a);
template <typename T>
Matrix<T> operator+(const Matrix<T>& a, const Matrix<T>& b);
template <typename T>
Matrix<T> operator-(const Matrix<T>& a, const Matrix<T>& b);
template <typename T>
double frobenius_norm(const Matrix<T>& a);
template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b);

// ---------------------------------------------------------------------------
// RBQ1 binary matrix format:
//   "RBQ1" | rows:u32le | cols:u32le | rows*cols f32le, row-major
// ---------------------------------------------------------------------------

void save_matrix(const MatrixF32& m, const std::filesystem::path& path);
MatrixF32 load_matrix(const std::filesystem::path& path);

/// Bytes taken by an RBQ1 file holding a rows x cols matrix.
constexpr std::size_t rbq1_file_size(std::size_t rows, std::size_t cols) {
  return 12 + 4 * rows * cols;
}

// ---------------------------------------------------------------------------
// Sensitivity tables
// ---------------------------------------------------------------------------

struct LayerSpec {
  std::string name;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  double flops_weight = 1.0;          // w_l, relative FLOPs share
  std::optional<int> fixed_bits;      // excluded from allocation when set

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

bool is_supported_bit_width(int bits) noexcept;

/// Per-layer, per-bit-width validation loss gaps.
struct SensitivityTable {
  std::vector<LayerSpec> layers;
  std::vector<int> bits;              // strictly increasing
  MatrixF64 delta_loss;               // [layer x bit]

  double at(std::size_t layer, int bit) const;
  std::size_t bit_index(int bit) const;
  void validate() const;

  friend bool operator==(const SensitivityTable&, const SensitivityTable&) = default;
};

/// CSV: `layer,flops_weight,fixed_bits,dL@<b>...`. Empty fixed_bits means
/// the layer takes part in allocation. in/out dims are not part of the file.
SensitivityTable parse_sensitivity(const std::string& text);
std::string format_sensitivity(const SensitivityTable& table);
SensitivityTable load_sensitivity(const std::filesystem::path& path);
void save_sensitivity(const SensitivityTable& table, const std::filesystem::path& path);

// Whole-file helpers shared by the other formats.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace robuq
