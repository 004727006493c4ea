#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "robuq/tensorio.hpp"

namespace robuq {

// ---------------------------------------------------------------------------
// Ternary weights
// ---------------------------------------------------------------------------

enum class TernaryGranularity { per_tensor, per_output_channel };

inline constexpr double kTernaryEps = 1e-8;

/// Values in {-1, 0, +1} with scale alpha. Per-tensor quantization keeps one
/// scale; the per-output-channel variant keeps one scale per row.
struct TernaryWeights {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> values;  // row-major
  std::vector<float> alpha;         // size 1 or rows

  float scale_for_row(std::size_t r) const noexcept { return alpha.size() == 1 ? alpha[0] : alpha[r]; }
  std::int8_t value(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }

  MatrixF32 dequantize() const;
  MatrixF32 values_matrix() const;
};

/// alpha * RoundClip(W / (gamma + eps), -1, 1) with gamma = alpha = mean |W|
/// taken over the whole tensor (or over each row for per_output_channel).
/// Rounding is half-to-even.
TernaryWeights ternarize(const MatrixF32& w, TernaryGranularity g = TernaryGranularity::per_tensor);
TernaryWeights ternarize(const MatrixF64& w, TernaryGranularity g = TernaryGranularity::per_tensor);

// ---------------------------------------------------------------------------
// Per-token min-max (asymmetric uniform) activations
// ---------------------------------------------------------------------------

struct UniformAffineQuant {
  int bits = 0;
  double scale = 1.0;          // delta
  std::int64_t zero_point = 0; // lambda
  double offset = 0.0;         // nonzero only for constant tokens
  std::vector<std::uint8_t> codes;

  std::vector<double> dequantize() const;
};

/// codes = clamp(floor(x / delta) + lambda, 0, 2^b - 1),
/// delta = (max - min) / (2^b - 1), lambda = -floor(min / delta).
/// A constant token stores delta = 1, codes = 0 and offset = the constant.
UniformAffineQuant minmax_quantize(std::span<const double> x, int bits);
UniformAffineQuant minmax_quantize(std::span<const float> x, int bits);

// ---------------------------------------------------------------------------
// Codebooks for N(0, 1)
// ---------------------------------------------------------------------------

struct GaussCodebook {
  int bits = 0;
  std::vector<double> levels;      // 2^b, strictly increasing
  std::vector<double> thresholds;  // 2^b - 1 decision boundaries
  bool is_uniform = false;
  double expected_mse = 0.0;       // E[(X - Q(X))^2], X ~ N(0, 1)

  std::size_t size() const noexcept { return levels.size(); }
  /// Index of the cell containing v.
  std::uint8_t encode(double v) const noexcept;
  void validate() const;
};

struct LloydMaxOptions {
  double tol = 1e-7;
  int max_iter = 10'000;
};

/// Lloyd-Max quantizer for the standard normal. Cell integrals use
/// Gauss-Legendre quadrature on [-8, 8]. Throws ConvergeError with the last
/// levels when max level movement stays >= tol after max_iter rounds.
GaussCodebook lloyd_max(int bits, const LloydMaxOptions& opts = {});

/// Symmetric arithmetic grid whose step minimizes the N(0, 1) MSE
/// (golden-section search over (0, 4]).
GaussCodebook uniform_gauss_codebook(int bits);

/// Thresholds at level midpoints plus the quadrature MSE for given levels.
GaussCodebook make_codebook(std::vector<double> levels, bool is_uniform);

/// Expected squared error of `levels`/`thresholds` against N(0, 1).
double gaussian_mse(std::span<const double> levels, std::span<const double> thresholds);

/// CSV with a "# bits=<b> uniform=<0|1> mse=<v>" comment, then "level,threshold".
std::string format_codebook(const GaussCodebook& cb);
GaussCodebook parse_codebook(const std::string& text);

// ---------------------------------------------------------------------------
// Per-token Gauss quantizer
// ---------------------------------------------------------------------------

/// One quantized token. sigma is the token's population standard deviation
/// about mu (mu = 0 when not centered). A token with zero spread is flagged
/// degenerate: it stores the middle code, sigma = 1, and dequantizes to mu.
struct GaussToken {
  std::vector<std::uint8_t> codes;
  double mu = 0.0;
  double sigma = 1.0;
  bool centered = true;
  bool degenerate = false;
};

/// Quantize an already Hadamard-transformed token.
GaussToken gauss_quantize_token(std::span<const double> x, const GaussCodebook& cb, bool center = true);
GaussToken gauss_quantize_token(std::span<const float> x, const GaussCodebook& cb, bool center = true);

/// Codes for x normalized with caller-supplied statistics.
std::vector<std::uint8_t> gauss_encode(std::span<const double> x, const GaussCodebook& cb, double mu,
                                       double sigma);

/// sigma * levels[codes] + mu. Throws ValidationError for out-of-range codes.
std::vector<double> gauss_dequantize(std::span<const std::uint8_t> codes, const GaussCodebook& cb, double mu,
                                     double sigma);
std::vector<double> gauss_dequantize_token(const GaussToken& token, const GaussCodebook& cb);

/// Quantize then dequantize in one pass (no Hadamard).
std::vector<double> gauss_fake_quant(std::span<const double> x, const GaussCodebook& cb, bool center = true);

}  // namespace robuq
