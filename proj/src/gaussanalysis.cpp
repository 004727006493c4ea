#include "robuq/gaussanalysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <utility>

#include "json.hpp"
#include "robuq/lowrank.hpp"

namespace robuq {

namespace {

void require_tokens(const MatrixF32& x, std::size_t min_tokens, const char* who) {
  if (x.rows() < min_tokens) {
    throw ValidationError(std::string(who) + ": need at least " + std::to_string(min_tokens) + " tokens, got " +
                          std::to_string(x.rows()));
  }
}

MatrixF64 transformed(const MatrixF32& x, const HadamardPlan& plan) {
  return transform_tokens(MatrixF64::cast(x), plan);
}

std::vector<double> column_means(const MatrixF64& m) {
  std::vector<double> mean(m.cols(), 0.0);
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t c = 0; c < m.cols(); ++c) mean[c] += m(t, c);
  for (double& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

void center_columns(MatrixF64& m) {
  const auto mean = column_means(m);
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t c = 0; c < m.cols(); ++c) m(t, c) -= mean[c];
}

std::vector<double> column_variances(const MatrixF64& m) {
  MatrixF64 c = m;
  center_columns(c);
  std::vector<double> var(m.cols(), 0.0);
  for (std::size_t t = 0; t < c.rows(); ++t)
    for (std::size_t j = 0; j < c.cols(); ++j) var[j] += c(t, j) * c(t, j);
  for (double& v : var) v /= static_cast<double>(m.rows() - 1);
  return var;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Entry of the (block-diagonal) normalized Hadamard matrix.
double hadamard_entry(const HadamardPlan& plan, std::size_t r, std::size_t c) {
  const std::size_t b = plan.block_size();
  if (r / b != c / b) return 0.0;
  const int parity = std::popcount((r % b) & (c % b)) & 1;
  return (parity ? -1.0 : 1.0) / std::sqrt(static_cast<double>(b));
}

std::vector<std::pair<std::size_t, std::size_t>> choose_pairs(std::size_t c, std::size_t exhaustive_limit,
                                                              std::size_t max_pairs, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (c < 2) return pairs;
  if (c <= exhaustive_limit) {
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i + 1; j < c; ++j) pairs.emplace_back(i, j);
    return pairs;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  const std::size_t total = c * (c - 1) / 2;
  const std::size_t want = std::min(max_pairs, total);
  while (seen.size() < want) {
    std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    seen.emplace(i, j);
  }
  pairs.assign(seen.begin(), seen.end());  // sorted pair order keeps reductions reproducible
  return pairs;
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

VarianceReport variance_identity(const MatrixF32& x, const HadamardPlan& plan) {
  require_tokens(x, 2, "variance_identity");
  if (x.cols() != plan.dim()) throw DimensionError("variance_identity: channel count does not match plan");
  VarianceReport rep;
  rep.pre_var = column_variances(MatrixF64::cast(x));
  rep.transformed_var = column_variances(transformed(x, plan));
  rep.sigma_t2 = mean_of(rep.pre_var);
  return rep;
}

OffdiagReport offdiag_cov_bound(const MatrixF32& x, const HadamardPlan& plan, std::uint64_t seed,
                                std::size_t max_pairs) {
  require_tokens(x, 2, "offdiag_cov_bound");
  if (x.cols() != plan.dim()) throw DimensionError("offdiag_cov_bound: channel count does not match plan");
  const std::size_t c = x.cols();
  const auto pre_var = column_variances(MatrixF64::cast(x));
  const double sigma_t2 = mean_of(pre_var);

  // Within one Hadamard block the covariance is a signed average of that
  // block's variance deviations, so the bound is taken block by block.
  const std::size_t b = plan.block_size();
  OffdiagReport rep;
  for (std::size_t blk = 0; blk < plan.blocks(); ++blk) {
    double norm2 = 0.0;
    for (std::size_t j = blk * b; j < (blk + 1) * b; ++j) norm2 += (pre_var[j] - sigma_t2) * (pre_var[j] - sigma_t2);
    rep.bound = std::max(rep.bound, std::sqrt(norm2) / std::sqrt(static_cast<double>(b)));
  }

  MatrixF64 y = transformed(x, plan);
  center_columns(y);
  const auto pairs = choose_pairs(c, 128, max_pairs, seed);
  rep.pairs = pairs.size();
  for (const auto& [i, j] : pairs) {
    double cov = 0.0;
    for (std::size_t t = 0; t < y.rows(); ++t) cov += y(t, i) * y(t, j);
    cov /= static_cast<double>(y.rows() - 1);
    rep.max_offdiag_cov = std::max(rep.max_offdiag_cov, std::abs(cov));

    double predicted = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double hi = hadamard_entry(plan, i, k);
      if (hi == 0.0) continue;
      predicted += hi * hadamard_entry(plan, j, k) * (pre_var[k] - sigma_t2);
    }
    rep.max_predicted_cov = std::max(rep.max_predicted_cov, std::abs(predicted));
  }
  return rep;
}

NormalityReport normality(const MatrixF32& x, const HadamardPlan& plan) {
  require_tokens(x, 2, "normality");
  if (x.cols() != plan.dim()) throw DimensionError("normality: channel count does not match plan");
  NormalityReport rep;
  const MatrixF64 xd = MatrixF64::cast(x);
  const auto pre_var = column_variances(xd);
  const double sigma_t2 = mean_of(pre_var);
  rep.sigma_t = std::sqrt(sigma_t2);

  const auto mean = column_means(xd);
  for (std::size_t c = 0; c < xd.cols(); ++c) {
    double m3 = 0.0;
    for (std::size_t t = 0; t < xd.rows(); ++t) m3 += std::pow(std::abs(xd(t, c) - mean[c]), 3);
    rep.m3 = std::max(rep.m3, m3 / static_cast<double>(xd.rows()));
  }
  if (sigma_t2 <= 0.0) return rep;

  // Each transformed coordinate sums block_size channels.
  rep.be_bound = kBerryEsseenConstant * rep.m3 /
                 (sigma_t2 * rep.sigma_t * std::sqrt(static_cast<double>(plan.block_size())));

  MatrixF64 y = transformed(x, plan);
  center_columns(y);
  std::vector<double> pooled(y.data().begin(), y.data().end());
  std::sort(pooled.begin(), pooled.end());
  const double n = static_cast<double>(pooled.size());
  constexpr std::size_t kGrid = 1024;
  for (std::size_t k = 0; k < kGrid; ++k) {
    const double z = -4.0 + 8.0 * static_cast<double>(k) / static_cast<double>(kGrid - 1);
    const double v = z * rep.sigma_t;
    const auto below = std::upper_bound(pooled.begin(), pooled.end(), v) - pooled.begin();
    const double emp = static_cast<double>(below) / n;
    rep.ks_distance = std::max(rep.ks_distance, std::abs(emp - std_normal_cdf(z)));
  }
  return rep;
}

KlReport kl_tv_product_gaussian(const MatrixF64& sigma, double sigma_t2) {
  const std::size_t m = sigma.rows();
  if (m == 0 || sigma.cols() != m) throw DimensionError("kl_tv_product_gaussian: Sigma must be square");
  if (!(sigma_t2 > 0.0)) throw ValidationError("kl_tv_product_gaussian: sigma_t2 must be positive");
  double scale = 0.0;
  for (double v : sigma.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(sigma(i, j) - sigma(j, i)) > 1e-12 * std::max(scale, 1.0)) {
        throw ValidationError("kl_tv_product_gaussian: Sigma is not symmetric");
      }

  auto cholesky_logdet = [m](MatrixF64 a) -> std::pair<bool, double> {
    double logdet = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double d = a(j, j);
      for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
      if (!(d > 0.0)) return {false, 0.0};
      const double l = std::sqrt(d);
      a(j, j) = l;
      logdet += 2.0 * std::log(l);
      for (std::size_t i = j + 1; i < m; ++i) {
        double s = a(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
        a(i, j) = s / l;
      }
    }
    return {true, logdet};
  };

  if (!cholesky_logdet(sigma).first) throw ValidationError("kl_tv_product_gaussian: Sigma is not positive definite");

  KlReport rep;
  MatrixF64 e(m, m);
  double fro2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    rep.max_diag_deviation = std::max(rep.max_diag_deviation, std::abs(sigma(i, i) - sigma_t2));
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      e(i, j) = sigma(i, j);
      fro2 += e(i, j) * e(i, j);
    }
  }
  MatrixF64 shifted = MatrixF64::identity(m);
  MatrixF64 scaled(m, m);
  for (std::size_t i = 0; i < m * m; ++i) {
    scaled.data()[i] = e.data()[i] / sigma_t2;
    shifted.data()[i] += scaled.data()[i];
  }
  const auto [pd, logdet] = cholesky_logdet(shifted);
  if (!pd) {
    throw ValidationError("kl_tv_product_gaussian: I + E/sigma_t2 is not positive definite");
  }
  rep.kl_exact = std::max(0.0, -0.5 * logdet);
  rep.kl_approx = 0.25 * fro2 / (sigma_t2 * sigma_t2);
  rep.tv_bound = std::sqrt(rep.kl_exact / 2.0);
  rep.approx_valid = jacobi_svd(scaled).s.front() < 0.5;
  return rep;
}

NmiReport nmi_channels(const MatrixF32& x, std::size_t bins, std::uint64_t seed, std::size_t max_pairs) {
  if (bins < 2 || bins > 256) throw ValidationError("nmi_channels: bins must be in [2, 256]");
  require_tokens(x, 10 * bins, "nmi_channels");
  const std::size_t t_count = x.rows();
  const std::size_t c = x.cols();

  // Equal-frequency bin edges per channel; ties share a bin.
  std::vector<std::vector<std::uint8_t>> binned(c, std::vector<std::uint8_t>(t_count));
  std::vector<float> col(t_count);
  std::vector<float> edges(bins - 1);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t t = 0; t < t_count; ++t) col[t] = x(t, j);
    std::vector<float> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 1; k < bins; ++k) edges[k - 1] = sorted[k * t_count / bins];
    for (std::size_t t = 0; t < t_count; ++t) {
      // A value equal to an edge lands in the bin that edge opens.
      binned[j][t] = static_cast<std::uint8_t>(std::upper_bound(edges.begin(), edges.end(), col[t]) - edges.begin());
    }
  }

  auto entropy = [&](const std::vector<std::uint8_t>& v) {
    std::vector<double> cnt(bins, 0.0);
    for (auto b : v) cnt[b] += 1.0;
    double h = 0.0;
    for (double n : cnt)
      if (n > 0) h -= (n / t_count) * std::log(n / t_count);
    return h;
  };
  std::vector<double> h(c);
  for (std::size_t j = 0; j < c; ++j) h[j] = entropy(binned[j]);

  std::vector<double> joint(bins * bins);
  std::vector<double> pa(bins);
  std::vector<double> pb(bins);
  auto nmi_pair = [&](const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, double ha, double hb) {
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    std::fill(joint.begin(), joint.end(), 0.0);
    std::fill(pa.begin(), pa.end(), 0.0);
    std::fill(pb.begin(), pb.end(), 0.0);
    for (std::size_t t = 0; t < t_count; ++t) {
      joint[a[t] * bins + b[t]] += 1.0;
      pa[a[t]] += 1.0;
      pb[b[t]] += 1.0;
    }
    const double n = static_cast<double>(t_count);
    double mi = 0.0;
    for (std::size_t i = 0; i < bins; ++i)
      for (std::size_t k = 0; k < bins; ++k) {
        const double nij = joint[i * bins + k];
        if (nij > 0) mi += (nij / n) * std::log(nij * n / (pa[i] * pb[k]));
      }
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
  };

  NmiReport rep;
  const auto pairs = choose_pairs(c, 64, max_pairs, seed);
  rep.pairs = pairs.size();
  if (pairs.empty()) return rep;
  double sum = 0.0;
  for (const auto& [i, j] : pairs) sum += nmi_pair(binned[i], binned[j], h[i], h[j]);
  rep.mean_nmi = sum / static_cast<double>(pairs.size());

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto shuffled = binned;
  for (auto& v : shuffled) std::shuffle(v.begin(), v.end(), rng);
  double base = 0.0;
  for (const auto& [i, j] : pairs) base += nmi_pair(shuffled[i], shuffled[j], h[i], h[j]);
  rep.shuffled_baseline = base / static_cast<double>(pairs.size());
  return rep;
}

MsePair mse_preservation(const MatrixF32& x, const HadamardPlan& plan, const VectorQuantizer& quantizer) {
  if (x.cols() != plan.dim()) throw DimensionError("mse_preservation: channel count does not match plan");
  MsePair out;
  if (x.rows() == 0) return out;
  std::vector<double> xt(x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto row = x.row(t);
    std::copy(row.begin(), row.end(), xt.begin());
    const auto y = fwht(std::span<const double>(xt), plan);
    const auto q = quantizer(y);
    if (q.size() != y.size()) throw DimensionError("mse_preservation: quantizer changed the vector length");
    const auto rec = fwht(std::span<const double>(q), plan);
    for (std::size_t c = 0; c < xt.size(); ++c) {
      out.mse_direct += (xt[c] - rec[c]) * (xt[c] - rec[c]);
      out.mse_transformed += (y[c] - q[c]) * (y[c] - q[c]);
    }
  }
  out.mse_direct /= static_cast<double>(x.rows());
  out.mse_transformed /= static_cast<double>(x.rows());
  return out;
}

GaussReport gauss_report(const MatrixF32& x, std::size_t bins, std::uint64_t seed) {
  const HadamardPlan plan(x.cols());
  GaussReport rep;
  rep.channels = x.cols();
  rep.tokens = x.rows();
  rep.bins = bins;
  rep.seed = seed;

  const auto var = variance_identity(x, plan);
  rep.per_coord_var = var.transformed_var;
  rep.sigma_t2 = var.sigma_t2;

  const auto off = offdiag_cov_bound(x, plan, seed);
  rep.max_offdiag_cov = off.max_offdiag_cov;
  rep.offdiag_bound = off.bound;

  const auto nrm = normality(x, plan);
  rep.ks_distance = nrm.ks_distance;
  rep.be_bound = nrm.be_bound;

  rep.kl_coords = std::min<std::size_t>(8, x.cols());
  if (rep.sigma_t2 > 0.0 && rep.kl_coords >= 2) {
    MatrixF64 y = transform_tokens(MatrixF64::cast(x), plan);
    center_columns(y);
    MatrixF64 cov(rep.kl_coords, rep.kl_coords);
    for (std::size_t t = 0; t < y.rows(); ++t)
      for (std::size_t i = 0; i < rep.kl_coords; ++i)
        for (std::size_t j = 0; j < rep.kl_coords; ++j) cov(i, j) += y(t, i) * y(t, j);
    for (double& v : cov.data()) v /= static_cast<double>(y.rows() - 1);
    const auto kl = kl_tv_product_gaussian(cov, rep.sigma_t2);
    rep.kl_exact = kl.kl_exact;
    rep.kl_approx = kl.kl_approx;
    rep.tv_bound = kl.tv_bound;
  }

  if (x.rows() >= 10 * bins) {
    const auto nmi = nmi_channels(x, bins, seed);
    rep.mean_nmi = nmi.mean_nmi;
    rep.nmi_baseline = nmi.shuffled_baseline;
  }
  return rep;
}

std::string gauss_report_json(const GaussReport& r) {
  nlohmann::ordered_json j;
  j["per_coord_var"] = r.per_coord_var;
  j["sigma_t2"] = r.sigma_t2;
  j["max_offdiag_cov"] = r.max_offdiag_cov;
  j["offdiag_bound"] = r.offdiag_bound;
  j["ks_distance"] = r.ks_distance;
  j["be_bound"] = r.be_bound;
  j["kl_exact"] = r.kl_exact;
  j["kl_approx"] = r.kl_approx;
  j["tv_bound"] = r.tv_bound;
  j["mean_nmi"] = r.mean_nmi;
  j["nmi_shuffled_baseline"] = r.nmi_baseline;
  j["meta"] = {{"C", r.channels}, {"T", r.tokens}, {"seed", r.seed}, {"bins", r.bins},
               {"K_BE", kBerryEsseenConstant}, {"kl_coords", r.kl_coords}};
  return j.dump(2) + "\n";
}

}  // namespace robuq
