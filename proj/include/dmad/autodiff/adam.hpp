#pragma once

#include <cstdint>
#include <vector>

#include "dmad/autodiff/tensor.hpp"

namespace dmad::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 0.0;
};

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::int64_t step = 0;
};

// One bias-corrected Adam update over every parameter in `store`, reading
// Parameter::grad. Moments are allocated on first use.
void adam_step(ParameterStore& store, AdamState& state, const AdamConfig& config);

// Scalar form of the same recurrence, for reference checks.
double adam_scalar_step(double x, double g, double& m, double& v, std::int64_t step,
                        const AdamConfig& config);

}  // namespace dmad::ad
