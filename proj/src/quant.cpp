#include "robuq/quant.hpp"

#include <algorithm>
#include <functional>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include "numfmt.hpp"

namespace robuq {

// ---------------------------------------------------------------------------
// Ternary
// ---------------------------------------------------------------------------

MatrixF32 TernaryWeights::dequantize() const {
  MatrixF32 out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const float a = scale_for_row(r);
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = a * static_cast<float>(value(r, c));
  }
  return out;
}

MatrixF32 TernaryWeights::values_matrix() const {
  MatrixF32 out(rows, cols);
  for (std::size_t i = 0; i < values.size(); ++i) out.data()[i] = values[i];
  return out;
}

namespace {

template <typename T>
TernaryWeights ternarize_impl(const Matrix<T>& w, TernaryGranularity g) {
  if (w.empty()) throw ValidationError("ternarize: empty weight matrix");
  TernaryWeights out;
  out.rows = w.rows();
  out.cols = w.cols();
  out.values.resize(w.size());

  auto quantize_span = [&](std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += std::abs(static_cast<double>(w.data()[i]));
    const double gamma = sum / static_cast<double>(end - begin);
    const double inv = 1.0 / (gamma + kTernaryEps);
    for (std::size_t i = begin; i < end; ++i) {
      const double q = std::nearbyint(static_cast<double>(w.data()[i]) * inv);
      out.values[i] = static_cast<std::int8_t>(std::clamp(q, -1.0, 1.0));
    }
    return static_cast<float>(gamma);
  };

  if (g == TernaryGranularity::per_tensor) {
    out.alpha = {quantize_span(0, w.size())};
  } else {
    out.alpha.resize(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) out.alpha[r] = quantize_span(r * w.cols(), (r + 1) * w.cols());
  }
  return out;
}

}  // namespace

TernaryWeights ternarize(const MatrixF32& w, TernaryGranularity g) { return ternarize_impl(w, g); }
TernaryWeights ternarize(const MatrixF64& w, TernaryGranularity g) { return ternarize_impl(w, g); }

// ---------------------------------------------------------------------------
// Min-max
// ---------------------------------------------------------------------------

std::vector<double> UniformAffineQuant::dequantize() const {
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    out[i] = (static_cast<double>(codes[i]) - static_cast<double>(zero_point)) * scale + offset;
  }
  return out;
}

UniformAffineQuant minmax_quantize(std::span<const double> x, int bits) {
  if (bits < 1 || bits > 8) throw ValidationError("minmax_quantize: bits must be in [1, 8]");
  if (x.empty()) throw ValidationError("minmax_quantize: empty token");
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ValidationError("minmax_quantize: non-finite input");

  UniformAffineQuant q;
  q.bits = bits;
  q.codes.assign(x.size(), 0);
  if (hi == lo) {
    q.scale = 1.0;
    q.zero_point = 0;
    q.offset = lo;
    return q;
  }
  const double qmax = std::ldexp(1.0, bits) - 1.0;
  q.scale = (hi - lo) / qmax;
  q.zero_point = -static_cast<std::int64_t>(std::floor(lo / q.scale));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::floor(x[i] / q.scale) + static_cast<double>(q.zero_point);
    q.codes[i] = static_cast<std::uint8_t>(std::clamp(c, 0.0, qmax));
  }
  return q;
}

UniformAffineQuant minmax_quantize(std::span<const float> x, int bits) {
  std::vector<double> xd(x.begin(), x.end());
  return minmax_quantize(std::span<const double>(xd), bits);
}

// ---------------------------------------------------------------------------
// Standard-normal quadrature
// ---------------------------------------------------------------------------

namespace {

constexpr double kSupport = 8.0;
constexpr std::size_t kNodesPerUnion = 2048;
constexpr std::size_t kMinNodesPerCell = 32;

struct GaussLegendre {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

GaussLegendre compute_gauss_legendre(std::size_t n) {
  GaussLegendre rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = z;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    rule.nodes[i] = -z;
    rule.nodes[n - 1 - i] = z;
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

const GaussLegendre& gauss_legendre(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, GaussLegendre> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute_gauss_legendre(n)).first;
  return it->second;
}

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Integrals of x^0, x^1, x^2 times phi over [a, b], clipped to the support.
struct CellMoments {
  double m0 = 0.0;
  double m1 = 0.0;
  double m2 = 0.0;
};

CellMoments cell_moments(double a, double b, const GaussLegendre& rule) {
  a = std::max(a, -kSupport);
  b = std::min(b, kSupport);
  CellMoments m;
  if (!(b > a)) return m;
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (b + a);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = mid + half * rule.nodes[i];
    const double w = rule.weights[i] * half * std_normal_pdf(x);
    m.m0 += w;
    m.m1 += w * x;
    m.m2 += w * x * x;
  }
  return m;
}

const GaussLegendre& rule_for_cells(std::size_t cells) {
  return gauss_legendre(std::max(kMinNodesPerCell, kNodesPerUnion / cells));
}

double cell_lo(std::span<const double> thresholds, std::size_t i) {
  return i == 0 ? -std::numeric_limits<double>::infinity() : thresholds[i - 1];
}
double cell_hi(std::span<const double> thresholds, std::size_t i) {
  return i == thresholds.size() ? std::numeric_limits<double>::infinity() : thresholds[i];
}

std::vector<double> midpoints(const std::vector<double>& levels) {
  std::vector<double> t(levels.size() - 1);
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) t[i] = 0.5 * (levels[i] + levels[i + 1]);
  return t;
}

void check_bits(int bits, const char* who) {
  if (bits < 1 || bits > 8) throw ValidationError(std::string(who) + ": bits must be in [1, 8]");
}

double normal_quantile(double p) {
  double lo = -kSupport;
  double hi = kSupport;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

void symmetrize(std::vector<double>& levels) {
  const std::size_t n = levels.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double v = 0.5 * (levels[n - 1 - i] - levels[i]);
    levels[i] = -v;
    levels[n - 1 - i] = v;
  }
}

}  // namespace

double gaussian_mse(std::span<const double> levels, std::span<const double> thresholds) {
  if (levels.empty() || thresholds.size() + 1 != levels.size()) {
    throw DimensionError("gaussian_mse: need one more level than thresholds");
  }
  const auto& rule = rule_for_cells(levels.size());
  double mse = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto m = cell_moments(cell_lo(thresholds, i), cell_hi(thresholds, i), rule);
    const double c = levels[i];
    mse += m.m2 - 2.0 * c * m.m1 + c * c * m.m0;
  }
  return std::max(mse, 0.0);
}

std::uint8_t GaussCodebook::encode(double v) const noexcept {
  const auto it = std::upper_bound(thresholds.begin(), thresholds.end(), v);
  return static_cast<std::uint8_t>(it - thresholds.begin());
}

void GaussCodebook::validate() const {
  check_bits(bits, "codebook");
  const std::size_t n = std::size_t{1} << bits;
  if (levels.size() != n || thresholds.size() != n - 1) {
    throw ValidationError("codebook: expected " + std::to_string(n) + " levels");
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!(levels[i] < thresholds[i] && thresholds[i] < levels[i + 1])) {
      throw ValidationError("codebook: thresholds must interleave strictly increasing levels");
    }
  }
}

GaussCodebook make_codebook(std::vector<double> levels, bool is_uniform) {
  if (levels.size() < 2 || !std::has_single_bit(levels.size())) {
    throw ValidationError("make_codebook: level count must be a power of two >= 2");
  }
  GaussCodebook cb;
  cb.bits = std::countr_zero(levels.size());
  cb.thresholds = midpoints(levels);
  cb.levels = std::move(levels);
  cb.is_uniform = is_uniform;
  cb.expected_mse = gaussian_mse(cb.levels, cb.thresholds);
  cb.validate();
  return cb;
}

constexpr double kLloydRelaxation = 1.8;

GaussCodebook lloyd_max(int bits, const LloydMaxOptions& opts) {
  check_bits(bits, "lloyd_max");
  const std::size_t n = std::size_t{1} << bits;
  const auto& rule = rule_for_cells(n);

  // Start from the high-resolution optimum (companded N(0, 3) quantiles).
  std::vector<double> levels(n);
  for (std::size_t i = 0; i < n; ++i) {
    levels[i] = std::sqrt(3.0) * normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
  }
  symmetrize(levels);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const auto thresholds = midpoints(levels);
    double moved = 0.0;
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto m = cell_moments(cell_lo(thresholds, i), cell_hi(thresholds, i), rule);
      next[i] = m.m0 > 0.0 ? m.m1 / m.m0 : levels[i];
    }
    symmetrize(next);
    for (std::size_t i = 0; i < n; ++i) moved = std::max(moved, std::abs(next[i] - levels[i]));
    if (moved < opts.tol) return make_codebook(std::move(next), false);
    // Over-relaxed step. The Lloyd map contracts slowly along its smooth
    // modes at high b, which plain iteration needs >10^4 rounds to shake out.
    std::vector<double> relaxed(n);
    for (std::size_t i = 0; i < n; ++i) relaxed[i] = levels[i] + kLloydRelaxation * (next[i] - levels[i]);
    levels = std::is_sorted(relaxed.begin(), relaxed.end(), std::less_equal<>{}) ? std::move(relaxed) : std::move(next);
  }
  throw ConvergeError("lloyd_max: no convergence for b=" + std::to_string(bits) + " within " +
                          std::to_string(opts.max_iter) + " iterations",
                      std::move(levels));
}

namespace {

std::vector<double> uniform_levels(std::size_t n, double step) {
  std::vector<double> levels(n);
  const double center = 0.5 * static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) levels[i] = (static_cast<double>(i) - center) * step;
  return levels;
}

double uniform_mse(std::size_t n, double step) {
  const auto levels = uniform_levels(n, step);
  const auto thresholds = midpoints(levels);
  return gaussian_mse(levels, thresholds);
}

}  // namespace

GaussCodebook uniform_gauss_codebook(int bits) {
  check_bits(bits, "uniform_gauss_codebook");
  const std::size_t n = std::size_t{1} << bits;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 1e-9;
  double b = 4.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = uniform_mse(n, c);
  double fd = uniform_mse(n, d);
  while (b - a > 1e-12) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = uniform_mse(n, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = uniform_mse(n, d);
    }
  }
  return make_codebook(uniform_levels(n, 0.5 * (a + b)), true);
}

std::string format_codebook(const GaussCodebook& cb) {
  cb.validate();
  std::string out = "# bits=" + std::to_string(cb.bits) + " uniform=" + (cb.is_uniform ? "1" : "0") +
                    " mse=" + detail::format_double(cb.expected_mse) + "\nlevel,threshold\n";
  for (std::size_t i = 0; i < cb.levels.size(); ++i) {
    out += detail::format_double(cb.levels[i]) + ',';
    if (i < cb.thresholds.size()) out += detail::format_double(cb.thresholds[i]);
    out += '\n';
  }
  return out;
}

GaussCodebook parse_codebook(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  GaussCodebook cb;
  bool have_meta = false;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string kv;
      int seen = 0;
      while (meta >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        bool ok = true;
        if (key == "bits") {
          ok = detail::parse_number(val, cb.bits);
          ++seen;
        } else if (key == "uniform") {
          cb.is_uniform = val == "1";
          ok = val == "0" || val == "1";
          ++seen;
        } else if (key == "mse") {
          ok = detail::parse_number(val, cb.expected_mse);
          ++seen;
        }
        if (!ok) throw FormatError("codebook: bad metadata '" + kv + "'");
      }
      have_meta = seen == 3;
      continue;
    }
    if (!have_header) {
      if (line != "level,threshold") throw FormatError("codebook: expected 'level,threshold' header");
      have_header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("codebook: row without comma");
    double level = 0.0;
    if (!detail::parse_number(std::string_view(line).substr(0, comma), level)) {
      throw FormatError("codebook: bad level '" + line + "'");
    }
    cb.levels.push_back(level);
    const auto rest = std::string_view(line).substr(comma + 1);
    if (!rest.empty()) {
      double t = 0.0;
      if (!detail::parse_number(rest, t)) throw FormatError("codebook: bad threshold '" + line + "'");
      cb.thresholds.push_back(t);
    }
  }
  if (!have_meta) throw FormatError("codebook: missing '# bits=.. uniform=.. mse=..' line");
  try {
    cb.validate();
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
  return cb;
}

// ---------------------------------------------------------------------------
// Per-token Gauss quantizer
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> gauss_encode(std::span<const double> x, const GaussCodebook& cb, double mu,
                                       double sigma) {
  std::vector<std::uint8_t> codes(x.size());
  const double inv = 1.0 / sigma;
  for (std::size_t i = 0; i < x.size(); ++i) codes[i] = cb.encode((x[i] - mu) * inv);
  return codes;
}

GaussToken gauss_quantize_token(std::span<const double> x, const GaussCodebook& cb, bool center) {
  if (x.empty()) throw ValidationError("gauss_quantize_token: empty token");
  GaussToken tok;
  tok.centered = center;
  const double n = static_cast<double>(x.size());
  if (center) {
    double s = 0.0;
    for (double v : x) s += v;
    tok.mu = s / n;
  }
  double ss = 0.0;
  for (double v : x) ss += (v - tok.mu) * (v - tok.mu);
  const double sigma = std::sqrt(ss / n);
  if (!std::isfinite(sigma)) throw ValidationError("gauss_quantize_token: non-finite input");
  if (sigma == 0.0) {
    tok.degenerate = true;
    tok.sigma = 1.0;
    tok.codes.assign(x.size(), static_cast<std::uint8_t>(cb.size() / 2));
    return tok;
  }
  tok.sigma = sigma;
  tok.codes = gauss_encode(x, cb, tok.mu, sigma);
  return tok;
}

GaussToken gauss_quantize_token(std::span<const float> x, const GaussCodebook& cb, bool center) {
  std::vector<double> xd(x.begin(), x.end());
  return gauss_quantize_token(std::span<const double>(xd), cb, center);
}

std::vector<double> gauss_dequantize(std::span<const std::uint8_t> codes, const GaussCodebook& cb, double mu,
                                     double sigma) {
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= cb.size()) {
      throw ValidationError("gauss_dequantize: code " + std::to_string(codes[i]) + " out of range for " +
                            std::to_string(cb.size()) + " levels");
    }
    out[i] = sigma * cb.levels[codes[i]] + mu;
  }
  return out;
}

std::vector<double> gauss_dequantize_token(const GaussToken& token, const GaussCodebook& cb) {
  if (token.degenerate) {
    for (auto c : token.codes) {
      if (c >= cb.size()) throw ValidationError("gauss_dequantize_token: code out of range");
    }
    return std::vector<double>(token.codes.size(), token.mu);
  }
  return gauss_dequantize(token.codes, cb, token.centered ? token.mu : 0.0, token.sigma);
}

std::vector<double> gauss_fake_quant(std::span<const double> x, const GaussCodebook& cb, bool center) {
  return gauss_dequantize_token(gauss_quantize_token(x, cb, center), cb);
}

}  // namespace robuq
