#include "dmad/autodiff/adam.hpp"

#include <cmath>

namespace dmad::ad {

double adam_scalar_step(double x, double g, double& m, double& v, std::int64_t step,
                        const AdamConfig& config) {
  m = config.beta1 * m + (1.0 - config.beta1) * g;
  v = config.beta2 * v + (1.0 - config.beta2) * g * g;
  const double mhat = m / (1.0 - std::pow(config.beta1, static_cast<double>(step)));
  const double vhat = v / (1.0 - std::pow(config.beta2, static_cast<double>(step)));
  return x - config.lr * mhat / (std::sqrt(vhat) + config.eps);
}

void adam_step(ParameterStore& store, AdamState& state, const AdamConfig& config) {
  auto params = store.all();
  if (state.first.size() != params.size()) {
    state.first.clear();
    state.second.clear();
    for (auto* p : params) {
      state.first.emplace_back(p->shape().size(), 0.0);
      state.second.emplace_back(p->shape().size(), 0.0);
    }
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    double total = 0.0;
    for (auto* p : params)
      for (double g : p->grad()) total += g * g;
    total = std::sqrt(total);
    if (total > config.clip_norm) clip = config.clip_norm / total;
  }
  ++state.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k]->mutable_value();
    auto grad = params[k]->grad();
    auto& m = state.first[k];
    auto& v = state.second[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * clip;
      // Untouched entries keep zero moments and must stay bit-identical.
      if (g == 0.0 && m[i] == 0.0 && v[i] == 0.0) continue;
      value[i] = adam_scalar_step(value[i], g, m[i], v[i], state.step, config);
    }
  }
}

}  // namespace dmad::ad
