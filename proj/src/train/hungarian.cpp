#include "dmad/train/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmad::train {

namespace {

// Solves for n <= m; p[j] is the row assigned to column j (1-based, 0 = none).
std::vector<std::size_t> solve(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  return p;
}

}  // namespace

Assignment hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw std::invalid_argument("hungarian: cost size mismatch");
  Assignment out;
  if (rows == 0 || cols == 0) return out;

  // Infinite entries are replaced by a value larger than any finite
  // assignment so the solver stays numeric; such pairs are dropped afterwards.
  double finite_max = 0.0;
  for (double c : cost)
    if (std::isfinite(c)) finite_max = std::max(finite_max, std::abs(c));
  const double big = (finite_max + 1.0) * static_cast<double>(std::max(rows, cols) + 1);

  const bool transpose = rows > cols;
  const std::size_t n = transpose ? cols : rows;
  const std::size_t m = transpose ? rows : cols;
  std::vector<double> a(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double c = transpose ? cost[j * cols + i] : cost[i * cols + j];
      a[i * m + j] = std::isfinite(c) ? c : big;
    }
  const auto p = solve(a, n, m);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t r = transpose ? j - 1 : p[j] - 1;
    const std::size_t c = transpose ? p[j] - 1 : j - 1;
    const double pc = cost[r * cols + c];
    if (!std::isfinite(pc)) continue;
    out.pairs.emplace_back(r, c);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.cost += cost[r * cols + c];
  return out;
}

}  // namespace dmad::train
