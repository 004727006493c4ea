#include "robuq/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "json.hpp"

namespace robuq {

namespace {

double dot_col(const MatrixF64& a, std::size_t i, const MatrixF64& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * b(r, j);
  return s;
}

double col_norm(const MatrixF64& a, std::size_t j) { return std::sqrt(dot_col(a, j, a, j)); }

// Modified Gram-Schmidt, two passes. Columns that vanish are replaced with
// random directions so the block keeps full column rank.
void orthonormalize(MatrixF64& q, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const std::size_t m = q.rows();
  for (std::size_t j = 0; j < q.cols(); ++j) {
    const double before = col_norm(q, j);
    for (int refill = 0; refill < 8; ++refill) {
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < j; ++i) {
          const double d = dot_col(q, i, q, j);
          for (std::size_t r = 0; r < m; ++r) q(r, j) -= d * q(r, i);
        }
      }
      const double nrm = col_norm(q, j);
      if (nrm > 1e-10 * std::max(before, 1e-300) && nrm > 1e-280) {
        for (std::size_t r = 0; r < m; ++r) q(r, j) /= nrm;
        break;
      }
      for (std::size_t r = 0; r < m; ++r) q(r, j) = normal(rng);
    }
  }
}

MatrixF64 take_cols(const MatrixF64& a, std::size_t n) {
  MatrixF64 out(a.rows(), n);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = a(r, c);
  return out;
}

}  // namespace

TruncatedSvd jacobi_svd(const MatrixF64& m) {
  const bool wide = m.cols() > m.rows();
  MatrixF64 a = wide ? transpose(m) : m;  // tall: rows >= cols
  const std::size_t rows = a.rows();
  const std::size_t n = a.cols();
  MatrixF64 v = MatrixF64::identity(n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot_col(a, p, a, p);
        const double beta = dot_col(a, q, a, q);
        const double gamma = dot_col(a, p, a, q);
        if (gamma == 0.0) continue;
        const double scale = std::sqrt(alpha * beta);
        if (scale == 0.0) continue;
        off = std::max(off, std::abs(gamma) / scale);
        if (std::abs(gamma) <= 1e-15 * scale) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double ap = a(r, p);
          const double aq = a(r, q);
          a(r, p) = c * ap - s * aq;
          a(r, q) = s * ap + c * aq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vp = v(r, p);
          const double vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (off <= 1e-15) break;
  }

  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) sv[j] = col_norm(a, j);
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

  TruncatedSvd out;
  MatrixF64 u(rows, n);
  MatrixF64 vs(n, n);
  out.s.resize(n);
  std::mt19937_64 rng(0x1acb1);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sv[j];
    for (std::size_t r = 0; r < rows; ++r) u(r, k) = sv[j] > 0.0 ? a(r, j) / sv[j] : 0.0;
    for (std::size_t r = 0; r < n; ++r) vs(r, k) = v(r, j);
  }
  // Left vectors of zero singular values are arbitrary; complete the basis.
  const double smax = n ? out.s[0] : 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (out.s[k] <= 1e-14 * smax || out.s[k] == 0.0) {
      std::normal_distribution<double> normal;
      for (std::size_t r = 0; r < rows; ++r) u(r, k) = normal(rng);
    }
  }
  orthonormalize(u, rng);
  if (wide) {
    out.u = std::move(vs);
    out.v = std::move(u);
  } else {
    out.u = std::move(u);
    out.v = std::move(vs);
  }
  return out;
}

TruncatedSvd truncated_svd(const MatrixF64& m, std::size_t rank, const SvdOptions& opts) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t min_dim = std::min(rows, cols);
  if (rank > min_dim) {
    throw DimensionError("truncated_svd: rank " + std::to_string(rank) + " exceeds min dim " +
                         std::to_string(min_dim));
  }
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw ValidationError("truncated_svd: non-finite input");
  }
  TruncatedSvd out;
  out.u = MatrixF64(rows, rank);
  out.v = MatrixF64(cols, rank);
  out.s.assign(rank, 0.0);
  if (rank == 0) return out;

  const double mnorm = frobenius_norm(m);
  if (mnorm == 0.0) {
    for (std::size_t k = 0; k < rank; ++k) {
      out.u(k, k) = 1.0;
      out.v(k, k) = 1.0;
    }
    return out;
  }

  const std::size_t block = std::min(min_dim, rank + opts.oversample);
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  MatrixF64 omega(cols, block);
  for (double& v : omega.data()) v = normal(rng);
  orthonormalize(omega, rng);
  MatrixF64 q = matmul(m, omega);
  orthonormalize(q, rng);
  const MatrixF64 mt = transpose(m);

  std::vector<double> last_iterate;
  for (int iter = 0; iter <= opts.max_iter; ++iter) {
    // Rayleigh-Ritz on span(Q): Q^T M = Vq S Ur^T.
    const MatrixF64 small = matmul(transpose(q), m);  // block x cols
    const TruncatedSvd ritz = jacobi_svd(small);
    MatrixF64 vr = take_cols(ritz.v, rank);           // cols x rank
    MatrixF64 ur = matmul(q, take_cols(ritz.u, rank));  // rows x rank

    const MatrixF64 mv = matmul(m, vr);
    const MatrixF64 resid = mv - matmul(q, matmul(transpose(q), mv));
    const double rnorm = frobenius_norm(resid);
    last_iterate.assign(ritz.s.begin(), ritz.s.begin() + static_cast<std::ptrdiff_t>(rank));
    if (rnorm <= opts.tol * mnorm || block == min_dim) {
      out.u = std::move(ur);
      out.v = std::move(vr);
      out.s = std::move(last_iterate);
      out.iterations = iter;
      return out;
    }
    MatrixF64 z = matmul(mt, q);
    orthonormalize(z, rng);
    q = matmul(m, z);
    orthonormalize(q, rng);
  }
  throw ConvergeError("truncated_svd: subspace did not converge within " + std::to_string(opts.max_iter) +
                          " iterations",
                      std::move(last_iterate));
}

TruncatedSvd truncated_svd(const MatrixF32& m, std::size_t rank, const SvdOptions& opts) {
  return truncated_svd(MatrixF64::cast(m), rank, opts);
}

MatrixF32 LowRankBranch::product() const {
  if (rank() == 0) return MatrixF32(a.rows(), b.cols());
  return MatrixF32::cast(matmul(MatrixF64::cast(a), MatrixF64::cast(b)));
}

QuantLinearLayer init_layer(const MatrixF32& w, const GaussCodebook& codebook, const LayerOptions& opts) {
  codebook.validate();
  QuantLinearLayer layer;
  layer.out_dim = w.rows();
  layer.in_dim = w.cols();
  layer.plan = HadamardPlan(w.cols());
  layer.center = opts.center;
  layer.codebook = codebook;

  const MatrixF64 wh = fold_into_weights(MatrixF64::cast(w), layer.plan);
  std::size_t rank = opts.rank;
  const std::size_t min_dim = std::min(w.rows(), w.cols());
  if (rank > min_dim) {
    std::cerr << "warning: rank " << rank << " clamped to " << min_dim << " for a " << w.rows() << "x"
              << w.cols() << " weight\n";
    rank = min_dim;
  }
  const TruncatedSvd svd = truncated_svd(wh, rank, opts.svd);
  MatrixF64 a(w.rows(), rank);
  MatrixF64 b(rank, w.cols());
  for (std::size_t k = 0; k < rank; ++k) {
    for (std::size_t r = 0; r < w.rows(); ++r) a(r, k) = svd.u(r, k) * svd.s[k];
    for (std::size_t c = 0; c < w.cols(); ++c) b(k, c) = svd.v(c, k);
  }
  layer.branch.a = MatrixF32::cast(a);
  layer.branch.b = MatrixF32::cast(b);
  // Residual against the stored (float) factors so reconstruction is consistent.
  const MatrixF64 ab = rank ? matmul(MatrixF64::cast(layer.branch.a), MatrixF64::cast(layer.branch.b))
                            : MatrixF64(w.rows(), w.cols());
  layer.wq = ternarize(wh - ab, opts.granularity);
  return layer;
}

MatrixF32 forward(const QuantLinearLayer& layer, const MatrixF32& x) {
  if (x.cols() != layer.in_dim) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) + " channels, layer expects " +
                         std::to_string(layer.in_dim));
  }
  const std::size_t rank = layer.branch.rank();
  MatrixF32 y(x.rows(), layer.out_dim);
  std::vector<double> h(layer.in_dim);
  std::vector<double> bh(rank);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xt = x.row(t);
    std::copy(xt.begin(), xt.end(), h.begin());
    fwht_inplace(std::span<double>(h), layer.plan);

    for (std::size_t k = 0; k < rank; ++k) {
      double s = 0.0;
      const auto brow = layer.branch.b.row(k);
      for (std::size_t i = 0; i < layer.in_dim; ++i) s += brow[i] * h[i];
      bh[k] = s;
    }
    const auto q = gauss_fake_quant(h, layer.codebook, layer.center);
    for (std::size_t o = 0; o < layer.out_dim; ++o) {
      double fp = 0.0;
      for (std::size_t k = 0; k < rank; ++k) fp += layer.branch.a(o, k) * bh[k];
      double acc = 0.0;
      const std::int8_t* v = layer.wq.values.data() + o * layer.in_dim;
      for (std::size_t i = 0; i < layer.in_dim; ++i) acc += v[i] * q[i];
      y(t, o) = static_cast<float>(fp + layer.wq.scale_for_row(o) * acc);
    }
  }
  return y;
}

MatrixF32 reconstruct_weight(const QuantLinearLayer& layer) {
  MatrixF64 m = MatrixF64::cast(layer.branch.product());
  for (std::size_t o = 0; o < layer.out_dim; ++o) {
    const double a = layer.wq.scale_for_row(o);
    for (std::size_t i = 0; i < layer.in_dim; ++i) m(o, i) += a * layer.wq.value(o, i);
  }
  return MatrixF32::cast(fold_into_weights(m, layer.plan));
}

void save_layer(const QuantLinearLayer& layer, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), ec.message());
  save_matrix(layer.branch.a, dir / "A.rbq");
  save_matrix(layer.branch.b, dir / "B.rbq");
  save_matrix(layer.wq.values_matrix(), dir / "wq_values.rbq");
  write_text_file(dir / "codebook.csv", format_codebook(layer.codebook));
  nlohmann::ordered_json meta;
  meta["rank"] = layer.branch.rank();
  meta["bits"] = layer.codebook.bits;
  meta["uniform"] = layer.codebook.is_uniform;
  meta["center"] = layer.center;
  meta["block_size"] = layer.plan.block_size();
  meta["in_dim"] = layer.in_dim;
  meta["out_dim"] = layer.out_dim;
  meta["granularity"] = layer.wq.alpha.size() == 1 ? "per_tensor" : "per_output_channel";
  meta["alpha"] = layer.wq.alpha;
  write_text_file(dir / "layer.json", meta.dump(2) + "\n");
}

QuantLinearLayer load_layer(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir / "layer.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + (dir / "layer.json").string() + "': " + e.what());
  }
  QuantLinearLayer layer;
  try {
    layer.in_dim = meta.at("in_dim").get<std::size_t>();
    layer.out_dim = meta.at("out_dim").get<std::size_t>();
    layer.center = meta.at("center").get<bool>();
    layer.plan = HadamardPlan(layer.in_dim);
    if (layer.plan.block_size() != meta.at("block_size").get<std::size_t>()) {
      throw FormatError("layer.json: block_size does not match in_dim");
    }
    layer.wq.alpha = meta.at("alpha").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + (dir / "layer.json").string() + "': " + e.what());
  }
  layer.codebook = parse_codebook(read_text_file(dir / "codebook.csv"));
  layer.branch.a = load_matrix(dir / "A.rbq");
  layer.branch.b = load_matrix(dir / "B.rbq");
  const MatrixF32 values = load_matrix(dir / "wq_values.rbq");
  if (values.rows() != layer.out_dim || values.cols() != layer.in_dim ||
      layer.branch.a.rows() != layer.out_dim || layer.branch.b.cols() != layer.in_dim ||
      layer.branch.a.cols() != layer.branch.b.rows() ||
      (layer.wq.alpha.size() != 1 && layer.wq.alpha.size() != layer.out_dim)) {
    throw FormatError("'" + dir.string() + "': layer files have inconsistent shapes");
  }
  layer.wq.rows = values.rows();
  layer.wq.cols = values.cols();
  layer.wq.values.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values.data()[i];
    if (v != -1.0f && v != 0.0f && v != 1.0f) throw ValidationError("wq_values.rbq: non-ternary entry");
    layer.wq.values[i] = static_cast<std::int8_t>(v);
  }
  return layer;
}

}  // namespace robuq
