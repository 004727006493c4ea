#include "robuq/hadamard.hpp"

#include <cmath>
#include <string>

namespace robuq {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

void check_length(std::size_t n, const HadamardPlan& plan) {
  if (n != plan.dim()) {
    throw DimensionError("hadamard: vector length " + std::to_string(n) + " does not match plan dim " +
                         std::to_string(plan.dim()));
  }
}

void butterfly(double* x, std::size_t n) {
  for (std::size_t h = 1; h < n; h <<= 1) {
    for (std::size_t i = 0; i < n; i += h << 1) {
      for (std::size_t j = i; j < i + h; ++j) {
        const double a = x[j];
        const double b = x[j + h];
        x[j] = (a + b) * kInvSqrt2;
        x[j + h] = (a - b) * kInvSqrt2;
      }
    }
  }
}

template <typename T>
Matrix<T> transform_rows(const Matrix<T>& x, const HadamardPlan& plan) {
  check_length(x.cols(), plan);
  Matrix<T> y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) fwht_inplace(y.row(r), plan);
  return y;
}

}  // namespace

HadamardPlan::HadamardPlan(std::size_t dim) : dim_(dim), block_(dim & (~dim + 1)) {
  if (dim == 0) throw DimensionError("hadamard: dimension must be positive");
}

void fwht_inplace(std::span<double> x, const HadamardPlan& plan) {
  check_length(x.size(), plan);
  const std::size_t b = plan.block_size();
  for (std::size_t off = 0; off < x.size(); off += b) butterfly(x.data() + off, b);
}

void fwht_inplace(std::span<float> x, const HadamardPlan& plan) {
  check_length(x.size(), plan);
  const std::size_t b = plan.block_size();
  std::vector<double> buf(b);
  for (std::size_t off = 0; off < x.size(); off += b) {
    for (std::size_t i = 0; i < b; ++i) buf[i] = x[off + i];
    butterfly(buf.data(), b);
    for (std::size_t i = 0; i < b; ++i) x[off + i] = static_cast<float>(buf[i]);
  }
}

std::vector<double> fwht(std::span<const double> x, const HadamardPlan& plan) {
  std::vector<double> y(x.begin(), x.end());
  fwht_inplace(std::span<double>(y), plan);
  return y;
}

std::vector<float> fwht(std::span<const float> x, const HadamardPlan& plan) {
  std::vector<float> y(x.begin(), x.end());
  fwht_inplace(std::span<float>(y), plan);
  return y;
}

MatrixF32 hadamard_matrix(std::size_t dim) {
  if (!is_power_of_two(dim)) {
    throw DimensionError("hadamard_matrix: " + std::to_string(dim) + " is not a power of two");
  }
  // Unnormalized +-1 Sylvester recursion, scaled once at the end.
  MatrixF64 h(1, 1, {1.0});
  for (std::size_t n = 1; n < dim; n <<= 1) {
    MatrixF64 next(2 * n, 2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        next(i, j) = h(i, j);
        next(i, j + n) = h(i, j);
        next(i + n, j) = h(i, j);
        next(i + n, j + n) = -h(i, j);
      }
    }
    h = std::move(next);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  MatrixF32 out(dim, dim);
  for (std::size_t i = 0; i < h.size(); ++i) out.data()[i] = static_cast<float>(h.data()[i] * scale);
  return out;
}

MatrixF32 transform_tokens(const MatrixF32& x, const HadamardPlan& plan) { return transform_rows(x, plan); }
MatrixF64 transform_tokens(const MatrixF64& x, const HadamardPlan& plan) { return transform_rows(x, plan); }

// Row o of W H is (H W_o^T)^T because H is symmetric.
MatrixF32 fold_into_weights(const MatrixF32& w, const HadamardPlan& plan) { return transform_rows(w, plan); }
MatrixF64 fold_into_weights(const MatrixF64& w, const HadamardPlan& plan) { return transform_rows(w, plan); }

}  // namespace robuq
