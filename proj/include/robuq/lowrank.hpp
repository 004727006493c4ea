#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "robuq/hadamard.hpp"
#include "robuq/quant.hpp"
#include "robuq/tensorio.hpp"

namespace robuq {

struct TruncatedSvd {
  MatrixF64 u;                  // m x r, orthonormal columns
  std::vector<double> s;        // r, nonincreasing
  MatrixF64 v;                  // n x r, orthonormal columns
  int iterations = 0;
};

struct SvdOptions {
  double tol = 1e-7;
  int max_iter = 2000;
  std::size_t oversample = 8;
  std::uint64_t seed = 0x5eed;
};

/// Top-r singular triplets by block power (subspace) iteration with
/// Rayleigh-Ritz extraction. Converged when the unexplained part of M V_r,
/// ||(I - Q Q^T) M V_r||_F, drops below tol * ||M||_F; this is the rotation of
/// the leading subspace out of the iterated block scaled by the spectrum.
TruncatedSvd truncated_svd(const MatrixF64& m, std::size_t rank, const SvdOptions& opts = {});
TruncatedSvd truncated_svd(const MatrixF32& m, std::size_t rank, const SvdOptions& opts = {});

/// Full SVD of a small dense matrix by one-sided Jacobi rotations (used for
/// the Rayleigh-Ritz step). Singular values are sorted nonincreasing.
TruncatedSvd jacobi_svd(const MatrixF64& m);

inline constexpr std::size_t kDefaultRank = 16;

/// Full-precision branch: A (out x r) = U_r diag(S_r), B (r x in) = V_r^T.
struct LowRankBranch {
  MatrixF32 a;
  MatrixF32 b;

  std::size_t rank() const noexcept { return a.cols(); }
  MatrixF32 product() const;  // A B, out x in
};

struct LayerOptions {
  std::size_t rank = kDefaultRank;
  bool center = true;
  TernaryGranularity granularity = TernaryGranularity::per_tensor;
  SvdOptions svd = {};
};

/// Ternary main branch on the Hadamard-folded residual, a low-rank FP branch,
/// and the activation codebook.
struct QuantLinearLayer {
  TernaryWeights wq;
  LowRankBranch branch;
  GaussCodebook codebook;
  HadamardPlan plan{1};
  bool center = true;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
};

/// WH = fold(W); A B = truncated SVD of WH; wq = ternarize(WH - A B).
/// Rank is clamped to min(out, in) with a warning on stderr.
QuantLinearLayer init_layer(const MatrixF32& w, const GaussCodebook& codebook, const LayerOptions& opts = {});

/// Per token: y = A (B (H x)) + alpha V (sigma_t levels[codes] + mu_t), codes
/// taken from the Gauss quantizer applied to H x. The FP branch sees the
/// unquantized H x.
MatrixF32 forward(const QuantLinearLayer& layer, const MatrixF32& x);

/// (A B + alpha V) H^T, the dense weight the layer represents.
MatrixF32 reconstruct_weight(const QuantLinearLayer& layer);

/// Directory layout: A.rbq, B.rbq, wq_values.rbq, codebook.csv, layer.json.
void save_layer(const QuantLinearLayer& layer, const std::filesystem::path& dir);
QuantLinearLayer load_layer(const std::filesystem::path& dir);

}  // namespace robuq
