#pragma once

#include <cstdint>
#include <vector>

#include "dmad/model/model.hpp"
#include "dmad/sim/episode.hpp"

namespace dmad::eval {

// Final-layer object queries that the training matcher associates with
// ground truth, with their true category.
struct QueryBatch {
  std::vector<std::vector<double>> queries;  // n x d
  std::vector<std::size_t> labels;
};

QueryBatch collect_positive_queries(const model::Model& model, const std::vector<sim::Episode>& episodes,
                                    std::size_t max_queries);

// Importance of channel j: mean absolute change of the true-category logit
// when column j is permuted across the batch, averaged over `repeats`
// permutations. Batches under 8 queries throw.
std::vector<double> permutation_importance(const model::Model& model, const QueryBatch& batch, std::size_t repeats,
                                           std::uint64_t seed);

// Gini coefficient of nonnegative values; 0 for a uniform or all-zero vector.
double gini(const std::vector<double>& values);

struct AttributionReport {
  std::vector<double> stage1, stage2;
  double gini1 = 0.0, gini2 = 0.0;
  std::vector<double> difference;  // stage1 - stage2 per channel

  double gini_increase() const { return gini2 - gini1; }
};

AttributionReport attribution(const model::Model& stage1, const model::Model& stage2,
                              const std::vector<sim::Episode>& episodes, std::size_t repeats, std::uint64_t seed,
                              std::size_t max_queries = 512);

}  // namespace dmad::eval
