#include "robuq/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace robuq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct DpLayers {
  std::vector<std::size_t> index;  // rows of the table taking part
  double total_weight = 0.0;
};

DpLayers dp_layers(const SensitivityTable& t) {
  DpLayers d;
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    if (t.layers[i].fixed_bits) continue;
    d.index.push_back(i);
    d.total_weight += t.layers[i].flops_weight;
  }
  return d;
}

// Feasibility is judged before anything else so a low target reports the
// minimum reachable average rather than a generic validation failure.
void check_target(const AllocationProblem& p) {
  const int min_bits = p.bit_set.front();
  if (p.target_avg_bits < min_bits) {
    throw InfeasibleError("target " + std::to_string(p.target_avg_bits) + " bits is below the minimum achievable " +
                              std::to_string(min_bits),
                          min_bits);
  }
}

Allocation finish(const AllocationProblem& p, const DpLayers& d, const std::vector<int>& chosen) {
  Allocation a;
  const auto& t = p.table;
  std::size_t k = 0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    const auto& spec = t.layers[i];
    if (spec.fixed_bits) {
      a.bits_per_layer.emplace_back(spec.name, *spec.fixed_bits);
      continue;
    }
    const int b = chosen[k++];
    a.bits_per_layer.emplace_back(spec.name, b);
    a.predicted_loss += t.at(i, b);
    weighted += spec.flops_weight * b;
  }
  a.achieved_avg_bits = d.total_weight > 0 ? weighted / d.total_weight : 0.0;
  return a;
}

}  // namespace

void AllocationProblem::validate() const {
  table.validate();
  if (bit_set.empty()) throw ValidationError("bit set is empty");
  for (std::size_t i = 0; i < bit_set.size(); ++i) {
    if (!is_supported_bit_width(bit_set[i])) throw ValidationError("unsupported bit width in bit set");
    if (i > 0 && bit_set[i] <= bit_set[i - 1]) throw ValidationError("bit set must be strictly increasing");
  }
  if (!(beta >= 10.0) || !std::isfinite(beta)) throw ValidationError("beta must be at least 10");
  if (!std::isfinite(target_avg_bits)) throw ValidationError("target average bits must be finite");
  for (std::size_t i = 0; i < table.layers.size(); ++i) {
    if (table.layers[i].fixed_bits) continue;
    for (int b : bit_set) (void)table.bit_index(b);
  }
}

int Allocation::bits_for(const std::string& layer) const {
  for (const auto& [name, b] : bits_per_layer)
    if (name == layer) return b;
  throw ValidationError("allocation has no layer '" + layer + "'");
}

Allocation dp_allocate(const AllocationProblem& p) {
  p.validate();
  check_target(p);
  const auto d = dp_layers(p.table);
  const std::size_t n = d.index.size();
  const auto& bits = p.bit_set;
  if (n == 0) return finish(p, d, {});

  std::vector<long long> cost(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double share = d.total_weight > 0 ? p.table.layers[d.index[k]].flops_weight / d.total_weight : 0.0;
    cost[k] = static_cast<long long>(std::floor(p.beta * share));
  }
  const long long budget = static_cast<long long>(std::floor(p.beta * p.target_avg_bits));

  long long min_cost = 0;
  for (long long c : cost) min_cost += c * bits.front();
  if (min_cost > budget) {
    throw InfeasibleError("budget of " + std::to_string(p.target_avg_bits) +
                              " average bits is infeasible after discretization",
                          static_cast<double>(min_cost) / p.beta);
  }

  const auto width = static_cast<std::size_t>(budget) + 1;
  std::vector<double> prev(width, kInf);
  std::vector<double> next(width);
  std::vector<std::vector<signed char>> choice(n, std::vector<signed char>(width, -1));
  prev[0] = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::fill(next.begin(), next.end(), kInf);
    const std::size_t row = d.index[k];
    for (std::size_t w = 0; w < width; ++w) {
      if (prev[w] == kInf) continue;
      // Ascending bits with a strict comparison keeps the lowest bit on ties.
      for (std::size_t j = 0; j < bits.size(); ++j) {
        const long long w2 = static_cast<long long>(w) + cost[k] * bits[j];
        if (w2 > budget) break;
        const double v = prev[w] + p.table.at(row, bits[j]);
        auto& slot = next[static_cast<std::size_t>(w2)];
        if (v < slot) {
          slot = v;
          choice[k][static_cast<std::size_t>(w2)] = static_cast<signed char>(j);
        }
      }
    }
    std::swap(prev, next);
  }

  std::size_t best_w = 0;
  for (std::size_t w = 1; w < width; ++w)
    if (prev[w] < prev[best_w]) best_w = w;

  std::vector<int> chosen(n);
  std::size_t w = best_w;
  for (std::size_t k = n; k-- > 0;) {
    const int j = choice[k][w];
    chosen[k] = bits[static_cast<std::size_t>(j)];
    w -= static_cast<std::size_t>(cost[k] * bits[static_cast<std::size_t>(j)]);
  }
  return finish(p, d, chosen);
}

Allocation brute_force_allocate(const AllocationProblem& p) {
  p.validate();
  const auto d = dp_layers(p.table);
  const std::size_t n = d.index.size();
  if (n > 12) throw SizeError("brute force supports at most 12 allocatable layers, got " + std::to_string(n));
  check_target(p);
  const auto& bits = p.bit_set;
  if (n == 0) return finish(p, d, {});

  // Scale-aware slack so an assignment sitting exactly on the budget passes.
  const double limit = p.target_avg_bits * d.total_weight * (1.0 + 1e-12);
  std::vector<std::size_t> digit(n, 0);
  std::vector<int> best;
  double best_loss = kInf;
  for (;;) {
    double used = 0.0;
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t row = d.index[k];
      used += p.table.layers[row].flops_weight * bits[digit[k]];
      loss += p.table.at(row, bits[digit[k]]);
    }
    if (used <= limit && loss < best_loss) {
      best_loss = loss;
      best.assign(n, 0);
      for (std::size_t k = 0; k < n; ++k) best[k] = bits[digit[k]];
    }
    std::size_t k = n;
    while (k > 0 && ++digit[k - 1] == bits.size()) digit[--k] = 0;
    if (k == 0) break;
  }
  if (best.empty()) throw InfeasibleError("no assignment fits the budget", bits.front());
  return finish(p, d, best);
}

double achieved_average(const Allocation& alloc, const SensitivityTable& table) {
  double total = 0.0;
  double weighted = 0.0;
  for (const auto& spec : table.layers) {
    const int b = alloc.bits_for(spec.name);
    total += spec.flops_weight;
    weighted += spec.flops_weight * b;
  }
  return total > 0 ? weighted / total : 0.0;
}

std::string allocation_json(const Allocation& alloc, const AllocationProblem& problem) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json bits = nlohmann::ordered_json::object();
  for (const auto& [name, b] : alloc.bits_per_layer) bits[name] = b;
  j["bits"] = bits;
  j["achieved_avg_bits"] = alloc.achieved_avg_bits;
  j["network_avg_bits"] = achieved_average(alloc, problem.table);
  j["predicted_loss"] = alloc.predicted_loss;
  j["beta"] = problem.beta;
  j["target"] = problem.target_avg_bits;
  j["bit_set"] = problem.bit_set;
  return j.dump(2) + "\n";
}

}  // namespace robuq
