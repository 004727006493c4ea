#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "robuq/hadamard.hpp"

using namespace robuq;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  return oracle::normal_samples(n, seed);
}

double inf_norm_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("hadamard") {

TEST_CASE("plan layout") {
  CHECK(HadamardPlan(256).block_size() == 256);
  CHECK(HadamardPlan(1152).block_size() == 128);
  CHECK(HadamardPlan(1152).blocks() == 9);
  CHECK(HadamardPlan(12).block_size() == 4);
  CHECK(HadamardPlan(7).block_size() == 1);
  CHECK_THROWS_AS(HadamardPlan(0), DimensionError);
}

TEST_CASE("basis vector, C = 2") {
  const std::vector<double> x{1.0, 0.0};
  const auto y = fwht(std::span<const double>(x), HadamardPlan(2));
  CHECK(y[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(y[1] == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("length mismatch is a dimension error") {
  std::vector<double> x(6);
  CHECK_THROWS_AS(fwht_inplace(std::span<double>(x), HadamardPlan(8)), DimensionError);
}

TEST_CASE("fast path matches the dense Sylvester oracle and is an involution") {
  for (std::size_t c = 2; c <= 1024; c *= 2) {
    const auto h = oracle::sylvester(c);
    const auto x = random_vec(c, c);
    const HadamardPlan plan(c);
    const auto y = fwht(std::span<const double>(x), plan);
    CHECK(inf_norm_diff(y, oracle::apply(h, x)) < 1e-5);
    const auto z = fwht(std::span<const double>(y), plan);
    CHECK(inf_norm_diff(z, x) < 1e-5);

    std::vector<float> xf(x.begin(), x.end());
    const auto yf = fwht(std::span<const float>(xf), plan);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(yf[i] - y[i]) < 1e-5);
  }
}

TEST_CASE("hadamard_matrix matches the recursion and is orthogonal") {
  CHECK(hadamard_matrix(1)(0, 0) == 1.0f);
  const auto h2 = hadamard_matrix(2);
  const float s = 1.0f / std::sqrt(2.0f);
  CHECK(h2(0, 0) == doctest::Approx(s));
  CHECK(h2(0, 1) == doctest::Approx(s));
  CHECK(h2(1, 0) == doctest::Approx(s));
  CHECK(h2(1, 1) == doctest::Approx(-s));

  for (std::size_t n : {8u, 64u, 256u}) {
    const auto h = hadamard_matrix(n);
    const auto ref = oracle::sylvester(n);
    double ortho = 0.0;
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        diff = std::max(diff, std::abs(h(i, j) - ref[i][j]));
        double s2 = 0.0;
        for (std::size_t k = 0; k < n; ++k) s2 += double(h(k, i)) * h(k, j);
        ortho = std::max(ortho, std::abs(s2 - (i == j ? 1.0 : 0.0)));
      }
    CHECK(diff < 1e-7);
    CHECK(ortho < 1e-6);
  }
  CHECK_THROWS_AS(hadamard_matrix(12), DimensionError);
}

TEST_CASE("block-diagonal plan applies H_block to each block") {
  const std::size_t c = 24;  // 3 blocks of 8
  const HadamardPlan plan(c);
  const auto x = random_vec(c, 3);
  const auto y = fwht(std::span<const double>(x), plan);
  const auto h8 = oracle::sylvester(8);
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> part(x.begin() + 8 * b, x.begin() + 8 * (b + 1));
    const auto ref = oracle::apply(h8, part);
    for (std::size_t i = 0; i < 8; ++i) CHECK(y[8 * b + i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  const auto z = fwht(std::span<const double>(y), plan);
  CHECK(inf_norm_diff(z, x) < 1e-12);
}

TEST_CASE("transform_tokens: identity rows give the rows of H, a scaled H row gives a one-hot") {
  const auto y = transform_tokens(MatrixF32::identity(4), HadamardPlan(4));
  const auto h = oracle::sylvester(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(y(i, j) == doctest::Approx(h[i][j]));

  const std::size_t c = 16;
  const auto h16 = oracle::sylvester(c);
  MatrixF32 row(1, c);
  for (std::size_t j = 0; j < c; ++j) row(0, j) = static_cast<float>(h16[5][j] * std::sqrt(16.0));
  const auto one_hot = transform_tokens(row, HadamardPlan(c));
  for (std::size_t j = 0; j < c; ++j) CHECK(one_hot(0, j) == doctest::Approx(j == 5 ? 4.0 : 0.0).epsilon(1e-6));
}

TEST_CASE("per-token norms are preserved") {
  MatrixF64 x(10, 512);
  std::mt19937_64 rng(5);
  std::student_t_distribution<double> heavy(3.0);
  for (double& v : x.data()) v = heavy(rng);
  const auto y = transform_tokens(x, HadamardPlan(512));
  for (std::size_t t = 0; t < 10; ++t) {
    double nx = 0.0;
    double ny = 0.0;
    for (double v : x.row(t)) nx += v * v;
    for (double v : y.row(t)) ny += v * v;
    CHECK(std::abs(ny - nx) / nx < 1e-12);
  }
  CHECK_THROWS_AS(transform_tokens(x, HadamardPlan(256)), DimensionError);
}

TEST_CASE("fold_into_weights: (WH)(Hx) = Wx, W = I gives H, folding twice restores W") {
  const std::size_t n = 8;
  MatrixF32 w(n, n);
  std::mt19937_64 rng(9);
  std::normal_distribution<float> d;
  for (float& v : w.data()) v = d(rng);
  const HadamardPlan plan(n);
  const auto wh = fold_into_weights(w, plan);
  std::vector<float> x(n);
  for (float& v : x) v = d(rng);
  const auto hx = fwht(std::span<const float>(x), plan);
  for (std::size_t i = 0; i < n; ++i) {
    double lhs = 0.0;
    double rhs = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      lhs += double(wh(i, j)) * hx[j];
      rhs += double(w(i, j)) * x[j];
    }
    CHECK(std::abs(lhs - rhs) < 1e-5);
  }
  CHECK(max_abs_diff(fold_into_weights(MatrixF32::identity(n), plan), hadamard_matrix(n)) < 1e-7);
  CHECK(max_abs_diff(fold_into_weights(wh, plan), w) < 1e-5);

  MatrixF32 wide(3, 16);
  CHECK(fold_into_weights(wide, HadamardPlan(16)).cols() == 16);
  CHECK_THROWS_AS(fold_into_weights(wide, HadamardPlan(8)), DimensionError);
}

}  // TEST_SUITE
