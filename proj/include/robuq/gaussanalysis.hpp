#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "robuq/hadamard.hpp"
#include "robuq/tensorio.hpp"

// Numerical checks of how the Hadamard transform turns arbitrary per-channel
// distributions into near-independent Gaussians of equal variance. Rows of X
// are treated as independent draws of one token position; columns are
// channels.
namespace robuq {

inline constexpr double kBerryEsseenConstant = 0.56;

struct VarianceReport {
  std::vector<double> pre_var;          // sample variance per input channel
  std::vector<double> transformed_var;  // sample variance per transformed coordinate
  double sigma_t2 = 0.0;                // mean of pre_var
};

VarianceReport variance_identity(const MatrixF32& x, const HadamardPlan& plan);

struct OffdiagReport {
  double max_offdiag_cov = 0.0;     // max |sample Cov(y_c, y_c')| over the pairs visited
  double max_predicted_cov = 0.0;   // max |(1/C) sum_j s_j delta_j| over the same pairs
  double bound = 0.0;               // ||delta||_2 / sqrt(C), taken per block for block-diagonal plans
  std::size_t pairs = 0;
};

/// Exact enumeration of coordinate pairs up to C = 128, a seeded random
/// subsample of `max_pairs` pairs above that.
OffdiagReport offdiag_cov_bound(const MatrixF32& x, const HadamardPlan& plan, std::uint64_t seed = 42,
                                std::size_t max_pairs = 4096);

struct NormalityReport {
  double ks_distance = 0.0;
  double be_bound = 0.0;
  double sigma_t = 0.0;
  double m3 = 0.0;  // max per-channel third absolute central moment
};

/// KS distance on a 1024-point grid over [-4 sigma_t, 4 sigma_t] between the
/// pooled, per-coordinate-centered transformed values and N(0, sigma_t^2),
/// plus the Berry-Esseen bound K * M3 / (sigma_t^3 sqrt(C)) with C the
/// Hadamard block size.
NormalityReport normality(const MatrixF32& x, const HadamardPlan& plan);

struct KlReport {
  double kl_exact = 0.0;
  double kl_approx = 0.0;
  double tv_bound = 0.0;
  double max_diag_deviation = 0.0;  // max |Sigma_ii - sigma_t2|, reported, not used
  bool approx_valid = false;        // ||E / sigma_t2||_op < 1/2
};

/// KL between N(0, Sigma) and N(0, sigma_t2 I) after zeroing the diagonal of
/// Sigma - sigma_t2 I, its second-order expansion, and the Pinsker TV bound.
KlReport kl_tv_product_gaussian(const MatrixF64& sigma, double sigma_t2);

struct NmiReport {
  double mean_nmi = 0.0;
  double shuffled_baseline = 0.0;  // same estimator on independently permuted channels
  std::size_t pairs = 0;
};

/// Mean pairwise NMI with equal-frequency bins, normalized by sqrt(H_i H_j).
/// All pairs when C <= 64, otherwise `max_pairs` seeded random pairs.
NmiReport nmi_channels(const MatrixF32& x, std::size_t bins = 16, std::uint64_t seed = 42,
                       std::size_t max_pairs = 512);

using VectorQuantizer = std::function<std::vector<double>(std::span<const double>)>;

struct MsePair {
  double mse_direct = 0.0;       // mean ||x - H^T Q(H x)||^2
  double mse_transformed = 0.0;  // mean ||H x - Q(H x)||^2
};

MsePair mse_preservation(const MatrixF32& x, const HadamardPlan& plan, const VectorQuantizer& quantizer);

struct GaussReport {
  std::vector<double> per_coord_var;
  double sigma_t2 = 0.0;
  double max_offdiag_cov = 0.0;
  double offdiag_bound = 0.0;
  double ks_distance = 0.0;
  double be_bound = 0.0;
  double kl_exact = 0.0;
  double kl_approx = 0.0;
  double tv_bound = 0.0;
  double mean_nmi = 0.0;
  double nmi_baseline = 0.0;
  std::size_t channels = 0;
  std::size_t tokens = 0;
  std::size_t bins = 0;
  std::size_t kl_coords = 0;
  std::uint64_t seed = 0;
};

/// Everything above on one activation matrix. The KL terms use the sample
/// covariance of the first min(8, C) transformed coordinates.
GaussReport gauss_report(const MatrixF32& x, std::size_t bins = 16, std::uint64_t seed = 42);
std::string gauss_report_json(const GaussReport& report);

}  // namespace robuq
