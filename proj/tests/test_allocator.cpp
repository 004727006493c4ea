#include <cmath>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "robuq/allocator.hpp"

using namespace robuq;

namespace {

SensitivityTable make_table(const std::vector<std::vector<double>>& dl, const std::vector<int>& bits,
                            const std::vector<double>& weights) {
  SensitivityTable t;
  t.bits = bits;
  t.delta_loss = MatrixF64(dl.size(), bits.size());
  for (std::size_t l = 0; l < dl.size(); ++l) {
    LayerSpec s;
    s.name = "layer" + std::to_string(l);
    s.flops_weight = weights[l];
    t.layers.push_back(s);
    for (std::size_t j = 0; j < bits.size(); ++j) t.delta_loss(l, j) = dl[l][j];
  }
  return t;
}

SensitivityTable random_table(std::size_t layers, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> dl(layers);
  std::vector<double> w(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    // Decreasing in b, like real loss gaps.
    double v = 1.0 + 4.0 * u(rng);
    for (int b = 0; b < 4; ++b) {
      dl[l].push_back(v);
      v *= 0.2 + 0.6 * u(rng);
    }
    w[l] = 0.1 + 3.0 * u(rng);
  }
  return make_table(dl, {1, 2, 3, 4}, w);
}

// Independent enumeration: best loss under the exact continuous budget.
double enumerate_best(const SensitivityTable& t, double target) {
  const std::size_t n = t.layers.size();
  double total_w = 0.0;
  for (const auto& s : t.layers) total_w += s.flops_weight;
  double best = INFINITY;
  std::size_t combos = 1;
  for (std::size_t i = 0; i < n; ++i) combos *= t.bits.size();
  for (std::size_t code = 0; code < combos; ++code) {
    std::size_t c = code;
    double used = 0.0, loss = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      const std::size_t j = c % t.bits.size();
      c /= t.bits.size();
      used += t.layers[l].flops_weight * t.bits[j];
      loss += t.delta_loss(l, j);
    }
    if (used <= target * total_w * (1 + 1e-12)) best = std::min(best, loss);
  }
  return best;
}

AllocationProblem problem(SensitivityTable t, double target, double beta = 1000.0, std::vector<int> bits = {1, 2, 3, 4}) {
  AllocationProblem p;
  p.table = std::move(t);
  p.target_avg_bits = target;
  p.beta = beta;
  p.bit_set = std::move(bits);
  return p;
}

}  // namespace

TEST_SUITE("allocator") {

TEST_CASE("two equal layers: the (1, 3) split wins only when it is cheaper than (2, 2)") {
  SUBCASE("(2, 2) is better") {
    const auto p = problem(make_table({{9, 1, 0.5}, {9, 8, 0.6}}, {1, 2, 3}, {1, 1}), 2.0, 1000, {1, 2, 3});
    const auto a = dp_allocate(p);
    CHECK(a.bits_for("layer0") == 2);
    CHECK(a.bits_for("layer1") == 2);
    CHECK(a.predicted_loss == doctest::Approx(9.0));
    CHECK(a.predicted_loss == doctest::Approx(enumerate_best(p.table, 2.0)));
    CHECK(brute_force_allocate(p).bits_per_layer == a.bits_per_layer);
  }
  SUBCASE("(1, 3) is better") {
    const auto p = problem(make_table({{8, 1, 0.5}, {9, 8, 0.6}}, {1, 2, 3}, {1, 1}), 2.0, 1000, {1, 2, 3});
    const auto a = dp_allocate(p);
    CHECK(a.bits_for("layer0") == 1);
    CHECK(a.bits_for("layer1") == 3);
    CHECK(a.predicted_loss == doctest::Approx(8.6));
    CHECK(a.predicted_loss == doctest::Approx(enumerate_best(p.table, 2.0)));
    CHECK(a.achieved_avg_bits == doctest::Approx(2.0));
  }
}

TEST_CASE("single layer takes the largest bit width under the target") {
  const auto t = make_table({{4, 3, 2, 1}}, {1, 2, 3, 4}, {2.5});
  for (double target : {1.0, 2.0, 3.5, 4.0, 8.0}) {
    const auto p = problem(t, target);
    const auto a = dp_allocate(p);
    CHECK(a.bits_for("layer0") == std::min(4, static_cast<int>(target)));
    CHECK(brute_force_allocate(p).bits_per_layer == a.bits_per_layer);
  }
}

TEST_CASE("equal losses resolve to the lower bit width") {
  const auto a = dp_allocate(problem(make_table({{0, 0, 0, 0}, {1, 1, 1, 1}}, {1, 2, 3, 4}, {1, 1}), 4.0));
  CHECK(a.bits_for("layer0") == 1);
  CHECK(a.bits_for("layer1") == 1);
  CHECK(a.achieved_avg_bits == 1.0);
}

TEST_CASE("DP matches exhaustive enumeration on random six-layer instances") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> tgt(1.2, 3.8);
  int exact = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const auto t = random_table(6, rng);
    const double target = tgt(rng);
    const auto p = problem(t, target);
    const auto a = dp_allocate(p);
    const double ref = enumerate_best(t, target);
    const auto bf = brute_force_allocate(p);
    CHECK(bf.predicted_loss == doctest::Approx(ref).epsilon(1e-12));
    // floor() on every cost can only enlarge the feasible set.
    CHECK(a.predicted_loss <= ref + 1e-12);
    CHECK(a.achieved_avg_bits <= target + 6.0 * 4.0 / p.beta);
    if (std::abs(a.predicted_loss - ref) <= 1e-12) ++exact;
  }
  CHECK(exact >= 20);
}

TEST_CASE("resolution sweep: coarse beta loosens the budget, fine beta closes the gap") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> tgt(1.5, 3.5);
  double coarse_gap = 0.0, fine_gap = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto t = random_table(4, rng);
    const double target = tgt(rng);
    const double ref = enumerate_best(t, target);
    const double coarse = dp_allocate(problem(t, target, 10.0)).predicted_loss;
    const double fine = dp_allocate(problem(t, target, 10000.0)).predicted_loss;
    CHECK(coarse <= ref + 1e-12);
    CHECK(fine <= ref + 1e-12);
    coarse_gap += ref - coarse;
    fine_gap += ref - fine;
  }
  CHECK(fine_gap <= coarse_gap);
  CHECK(fine_gap < 0.05 * 20);
}

TEST_CASE("predicted loss is non-increasing in the target") {
  std::mt19937_64 rng(5);
  const auto t = random_table(5, rng);
  double prev = INFINITY;
  for (double target = 1.0; target <= 4.0; target += 0.25) {
    const double l = dp_allocate(problem(t, target)).predicted_loss;
    CHECK(l <= prev + 1e-12);
    prev = l;
  }
}

TEST_CASE("fixed layers are excluded from the DP but counted in the network average") {
  auto t = make_table({{5, 4, 3, 2}, {5, 4, 3, 2}}, {1, 2, 3, 4}, {1, 1});
  t.layers[0].fixed_bits = 4;
  const auto a = dp_allocate(problem(t, 1.0));
  CHECK(a.bits_for("layer0") == 4);
  CHECK(a.bits_for("layer1") == 1);
  CHECK(a.achieved_avg_bits == 1.0);
  CHECK(a.predicted_loss == 5.0);
  CHECK(achieved_average(a, t) == doctest::Approx(2.5));
  CHECK_THROWS_AS(a.bits_for("missing"), ValidationError);
}

TEST_CASE("errors: infeasible target, bad beta, bad bit set, too many layers for brute force") {
  const auto t = make_table({{1, 0.5, 0.2, 0.1}}, {1, 2, 3, 4}, {1});
  CHECK_THROWS_AS(dp_allocate(problem(t, 0.5)), InfeasibleError);
  CHECK_THROWS_AS(brute_force_allocate(problem(t, 0.5)), InfeasibleError);
  CHECK_THROWS_AS(dp_allocate(problem(t, 2.0, 5.0)), ValidationError);
  CHECK_THROWS_AS(dp_allocate(problem(t, 2.0, 1000, {2, 1})), ValidationError);
  CHECK_THROWS_AS(dp_allocate(problem(t, 2.0, 1000, {1, 8})), ValidationError);

  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(brute_force_allocate(problem(random_table(13, rng), 2.0)), SizeError);
  CHECK_NOTHROW(dp_allocate(problem(random_table(13, rng), 2.0)));
}

TEST_CASE("allocation JSON") {
  const auto t = make_table({{9, 1, 0.5}, {9, 8, 0.6}}, {1, 2, 3}, {1, 1});
  const auto p = problem(t, 2.0, 1000, {1, 2, 3});
  const auto j = nlohmann::json::parse(allocation_json(dp_allocate(p), p));
  CHECK(j["bits"]["layer0"] == 2);
  CHECK(j["bits"]["layer1"] == 2);
  CHECK(j["predicted_loss"].get<double>() == doctest::Approx(9.0));
  CHECK(j["beta"] == 1000.0);
  CHECK(j["target"] == 2.0);
  CHECK(j["network_avg_bits"].get<double>() == doctest::Approx(2.0));
}

}  // TEST_SUITE
