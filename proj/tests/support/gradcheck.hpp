#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.
// Independent of the reverse sweep: it only evaluates forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dmad/autodiff/ops.hpp"
#include "dmad/autodiff/tensor.hpp"

namespace dmad::testing {

struct GradInput {
  ad::Shape shape;
  std::vector<double> values;
};

using ScalarFn = std::function<ad::Tensor(ad::Tape&, const std::vector<ad::Tensor>&)>;

// Relative error with a floor on the denominator so that near-zero
// gradients are compared on an absolute scale.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
}

// Max relative error between reverse-mode and central-difference gradients of
// `fn` over every input entry.
inline double gradcheck(const ScalarFn& fn, const std::vector<GradInput>& inputs, double eps = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Tensor> xs;
    for (const auto& in : inputs) xs.push_back(tape.variable(in.shape, in.values));
    auto loss = fn(tape, xs);
    tape.backward(loss);
    for (const auto& x : xs) analytic.push_back(tape.grad(x));
  }
  auto eval = [&](const std::vector<GradInput>& ins) {
    ad::Tape tape;
    std::vector<ad::Tensor> xs;
    for (const auto& in : ins) xs.push_back(tape.constant(in.shape, in.values));
    return fn(tape, xs).item();
  };
  double worst = 0.0;
  auto work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].values.size(); ++i) {
      const double x0 = inputs[k].values[i];
      work[k].values[i] = x0 + eps;
      const double fp = eval(work);
      work[k].values[i] = x0 - eps;
      const double fm = eval(work);
      work[k].values[i] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      worst = std::max(worst, rel_err(analytic[k][i], numeric));
    }
  }
  return worst;
}

}  // namespace dmad::testing
