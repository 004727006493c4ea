#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "robuq/tensorio.hpp"

namespace robuq {

struct AllocationProblem {
  SensitivityTable table;
  double target_avg_bits = 4.0;
  double beta = 1000.0;
  std::vector<int> bit_set = {1, 2, 3, 4};

  void validate() const;
};

struct Allocation {
  std::vector<std::pair<std::string, int>> bits_per_layer;  // table order, fixed layers included
  double achieved_avg_bits = 0.0;  // FLOPs-weighted over DP layers
  double predicted_loss = 0.0;     // sum of dL over DP layers

  int bits_for(const std::string& layer) const;
};

/// Knapsack-style DP over [layer x discretized budget]. Layer costs are
/// floor(beta * w / W_dp) and the budget is floor(beta * target). Equal
/// losses resolve toward the lower bit width, then the lower total cost.
Allocation dp_allocate(const AllocationProblem& problem);

/// Exhaustive search under the exact budget sum(w b) / W_dp <= target.
/// At most 12 DP layers.
Allocation brute_force_allocate(const AllocationProblem& problem);

/// FLOPs-weighted mean over every layer of the table, fixed ones included.
double achieved_average(const Allocation& alloc, const SensitivityTable& table);

/// {"bits": {layer: b}, "achieved_avg_bits", "network_avg_bits", "predicted_loss", "beta", "target"}
std::string allocation_json(const Allocation& alloc, const AllocationProblem& problem);

}  // namespace robuq
