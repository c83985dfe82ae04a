#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace dmad::train {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double cost = 0.0;
};

// Minimum-cost one-to-one assignment of min(rows, cols) pairs for a row-major
// rows x cols cost matrix (shortest augmenting paths with potentials).
// Pairs whose cost is infinite are left unassigned.
Assignment hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols);

}  // namespace dmad::train
