#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "robuq/tensorio.hpp"

namespace robuq {

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

/// Channel layout for the normalized Sylvester-Hadamard transform.
///
/// Power-of-two dims use a single block. Other dims use a block-diagonal
/// transform whose block is the largest power-of-two divisor of `dim`
/// (e.g. 1152 = 9 x 128), which keeps the transform exactly orthogonal and
/// symmetric.
class HadamardPlan {
 public:
  explicit HadamardPlan(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t block_size() const noexcept { return block_; }
  std::size_t blocks() const noexcept { return dim_ / block_; }

  friend bool operator==(const HadamardPlan&, const HadamardPlan&) = default;

 private:
  std::size_t dim_;
  std::size_t block_;
};

// Butterfly with a 1/sqrt(2) scale per stage, so the result is H x with
// H^T H = I. H is symmetric, hence fwht is its own inverse.
void fwht_inplace(std::span<double> x, const HadamardPlan& plan);
void fwht_inplace(std::span<float> x, const HadamardPlan& plan);
std::vector<double> fwht(std::span<const double> x, const HadamardPlan& plan);
std::vector<float> fwht(std::span<const float> x, const HadamardPlan& plan);

/// Dense H of order `dim` built by the recursive Sylvester construction.
MatrixF32 hadamard_matrix(std::size_t dim);

/// Y_t = H X_t for every row (token) of X.
MatrixF32 transform_tokens(const MatrixF32& x, const HadamardPlan& plan);
MatrixF64 transform_tokens(const MatrixF64& x, const HadamardPlan& plan);

/// W H for an out x in weight; (W H)(H x) == W x.
MatrixF32 fold_into_weights(const MatrixF32& w, const HadamardPlan& plan);
MatrixF64 fold_into_weights(const MatrixF64& w, const HadamardPlan& plan);

}  // namespace robuq
