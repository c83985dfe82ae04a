#pragma once

// Independent reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace dmad::testing {

// Minimum assignment cost over every injection of the smaller side into the
// larger, by enumerating permutations of the larger side.
inline double brute_force_assignment(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  const bool tall = rows > cols;
  const std::size_t small = tall ? cols : rows, large = tall ? rows : cols;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < small; ++i)
      c += tall ? cost[perm[i] * cols + i] : cost[i * cols + perm[i]];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Mean absolute difference form of the Gini coefficient.
inline double gini_pairwise(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double total = 0.0, diff = 0.0;
  for (double a : x) {
    total += a;
    for (double b : x) diff += std::abs(a - b);
  }
  if (total == 0.0) return 0.0;
  return diff / (2.0 * n * total);
}

}  // namespace dmad::testing
