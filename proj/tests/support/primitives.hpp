#pragma once

// Finite-difference sweep over every autodiff primitive and the composed
// attention and decoder-layer operators, for one seed.

#include <string>
#include <utility>
#include <vector>

#include "dmad/autodiff/nn.hpp"
#include "dmad/core/rng.hpp"
#include "dmad/model/layers.hpp"
#include "dmad/sim/episode.hpp"
#include "gradcheck.hpp"

namespace dmad::testing {

inline std::vector<double> uniform_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

using CheckResults = std::vector<std::pair<std::string, double>>;

inline CheckResults primitive_checks(std::uint64_t seed) {
  using namespace ad;
  CheckResults out;
  Rng rng(seed * 7919 + 1);
  const Shape s{3, 4};
  auto unary = [&](const std::string& name, auto op, double lo, double hi) {
    const auto x = uniform_values(s.size(), rng, lo, hi);
    const auto w = uniform_values(s.size() * 4, rng);
    out.emplace_back(name, gradcheck(
                               [&](Tape& t, const std::vector<Tensor>& in) {
                                 const Tensor y = op(in[0]);
                                 return sum_all(mul(y, t.constant(y.shape(), {w.begin(), w.begin() + y.size()})));
                               },
                               {{s, x}}));
  };
  unary("relu", [](const Tensor& x) { return relu(x); }, -1, 1);
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, -2, 2);
  unary("exp", [](const Tensor& x) { return exp(x); }, -1, 1);
  unary("log", [](const Tensor& x) { return log(x); }, 0.5, 2);
  unary("sqrt", [](const Tensor& x) { return sqrt(x); }, 0.5, 2);
  unary("abs", [](const Tensor& x) { return abs(x); }, -1, 1);
  unary("square", [](const Tensor& x) { return square(x); }, -1, 1);
  unary("scale", [](const Tensor& x) { return scale(x, -1.7); }, -1, 1);
  unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }, -1, 1);
  unary("softmax_rows", [](const Tensor& x) { return softmax(x, 1); }, -2, 2);
  unary("softmax_cols", [](const Tensor& x) { return softmax(x, 0); }, -2, 2);
  unary("log_softmax", [](const Tensor& x) { return log_softmax(x); }, -2, 2);
  unary("transpose", [](const Tensor& x) { return transpose(x); }, -1, 1);
  unary("reshape", [](const Tensor& x) { return reshape(x, Shape{2, 6}); }, -1, 1);
  unary("sum_rows", [](const Tensor& x) { return sum(x, 0); }, -1, 1);
  unary("mean_cols", [](const Tensor& x) { return mean(x, 1); }, -1, 1);
  unary("sum_all", [](const Tensor& x) { return sum_all(x); }, -1, 1);
  unary("mean_all", [](const Tensor& x) { return mean_all(x); }, -1, 1);
  unary("gather_rows", [](const Tensor& x) { return gather_rows(x, {2, 0, 2}); }, -1, 1);
  unary("split_concat_cols", [](const Tensor& x) {
    auto p = split(x, 1, {1, 3});
    return concat({p[1], p[0]}, 1);
  }, -1, 1);
  unary("split_concat_rows", [](const Tensor& x) {
    auto p = split(x, 0, {2, 1});
    return concat({p[1], p[0], p[1]}, 0);
  }, -1, 1);

  const auto a = uniform_values(s.size(), rng);
  auto binary = [&](const std::string& name, auto op, Shape sb, double lo, double hi) {
    const auto b = uniform_values(sb.size(), rng, lo, hi);
    out.emplace_back(name, gradcheck([&](Tape&, const std::vector<Tensor>& in) { return sum_all(square(op(in[0], in[1]))); },
                                     {{s, a}, {sb, b}}));
  };
  binary("add", [](auto x, auto y) { return add(x, y); }, s, -1, 1);
  binary("sub_row", [](auto x, auto y) { return sub(x, y); }, Shape{1, 4}, -1, 1);
  binary("mul_col", [](auto x, auto y) { return mul(x, y); }, Shape{3, 1}, -1, 1);
  binary("mul_scalar", [](auto x, auto y) { return mul(x, y); }, Shape{1, 1}, -1, 1);
  binary("div", [](auto x, auto y) { return div(x, y); }, s, 0.5, 2);
  binary("matmul", [](auto x, auto y) { return matmul(x, y); }, Shape{4, 5}, -1, 1);
  out.emplace_back("layer_norm",
                   gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     return sum_all(mul(layer_norm(in[0], in[1], in[2]), t.constant(s, a)));
                   },
                             {{s, uniform_values(12, rng)}, {{1, 4}, uniform_values(4, rng, 0.5, 2)},
                              {{1, 4}, uniform_values(4, rng)}}));
  return out;
}

inline CheckResults composite_checks(std::uint64_t seed) {
  using namespace ad;
  CheckResults out;
  Rng rng(seed * 104729 + 3);
  model::ModelConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 12;
  cfg.num_map = 3;
  cfg.grid = 4;
  ParameterStore store;
  const std::size_t d = cfg.dim, nq = 3, nk = 5;
  std::vector<sim::Vec2> centers;
  for (std::size_t k = 0; k < nk; ++k) centers.push_back({rng.uniform(-40, 40), rng.uniform(-40, 40)});
  model::Points refs;
  for (std::size_t i = 0; i < nq; ++i) refs.push_back({rng.uniform(-40, 40), rng.uniform(-40, 40), 0.0});
  const auto w_out = uniform_values(64 * d, rng);
  auto project = [&](Tape& t, const Tensor& y) {
    return sum_all(mul(y, t.constant(y.shape(), {w_out.begin(), w_out.begin() + y.size()})));
  };
  const GradInput q{{nq, d}, uniform_values(nq * d, rng)};
  const GradInput z{{nk, d}, uniform_values(nk * d, rng)};
  const GradInput m{{cfg.num_map, d}, uniform_values(cfg.num_map * d, rng)};

  MultiHeadAttention mha(store, "mha", d, cfg.heads, rng);
  const auto bias = uniform_values(nq * nk, rng, -2, 2);
  AttentionMask mask = AttentionMask::full(nq, nk);
  mask.allowed[1] = 0;
  mask.allowed[nk + 3] = 0;
  out.emplace_back("attention", gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     return project(t, mha(t, in[0], in[1], in[1], &mask, {t.constant({nq, nk}, bias)}));
                   },
                                          {q, z}));
  model::JointAttention joint(store, "joint", d, cfg.heads, rng);
  out.emplace_back("joint_attention", gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     const auto r = joint(t, {in[0], in[1]}, {{true, true}, {false, true}});
                     return add(project(t, r[0]), project(t, r[1]));
                   },
                                                {q, m}));
  model::LocatingAttention loc(store, "loc", cfg, rng);
  auto& log_scale = store.add("loc.ref_scale", {1, cfg.heads}, {-5.0, -4.0});
  out.emplace_back("locating_attention", gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     const auto b = model::reference_bias(t, refs, centers, log_scale, cfg.heads);
                     return project(t, loc(t, in[0], in[1], refs, centers, b));
                   },
                                                   {q, z}));
  model::InteractiveLayer layer(store, "semantic", cfg, rng);
  out.emplace_back("semantic_layer", gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     const auto r = layer(t, in[0], in[2], in[1], refs, centers, cfg.interactions);
                     return add(project(t, r.obj), project(t, r.map));
                   },
                                               {q, z, m}));
  model::MotionLayer motion(store, "motion", cfg, rng);
  out.emplace_back("motion_layer", gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     return project(t, motion(t, in[0], in[1], refs, centers));
                   },
                                             {q, z}));
  model::UnimodalHead uni(store, "uni", cfg, rng);
  out.emplace_back("velocity_from_trajectory", gradcheck([&](Tape& t, const std::vector<Tensor>& in) {
                     return project(t, model::velocity_from_trajectory(uni(t, in[0], refs), cfg.past_steps, cfg.dt));
                   },
                                                         {q}));
  return out;
}

}  // namespace dmad::testing
