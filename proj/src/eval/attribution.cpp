#include "dmad/eval/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dmad/autodiff/ops.hpp"
#include "dmad/core/rng.hpp"
#include "dmad/train/losses.hpp"
#include "dmad/tracker/tracker.hpp"

namespace dmad::eval {

using namespace dmad::ad;

QueryBatch collect_positive_queries(const model::Model& model, const std::vector<sim::Episode>& episodes,
                                    std::size_t max_queries) {
  const auto& cfg = model.config();
  QueryBatch batch;
  for (const auto& ep : episodes) {
    for (int f = 0; f < ep.frames() && batch.queries.size() < max_queries; ++f) {
      Tape tape;
      model::FrameInput in;
      in.tokens = &ep.tokens[static_cast<std::size_t>(f)];
      in.ego_position = ep.states[static_cast<std::size_t>(f)].ego.position;
      in.motion_heads = false;
      const auto out = model.forward(tape, in);
      const auto targets = train::make_targets(ep, f, cfg);
      const auto& boxes = out.final().boxes;
      const std::vector<double> centers(boxes.centers.value().begin(), boxes.centers.value().end());
      const auto match =
          train::match_objects(train::class_probabilities(boxes.logits), centers, cfg.num_obj, targets, {}, {});
      for (const auto& [slot, j] : match.pairs) {
        if (batch.queries.size() >= max_queries) break;
        const auto v = out.obj.value();
        batch.queries.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(slot * cfg.dim),
                                   v.begin() + static_cast<std::ptrdiff_t>((slot + 1) * cfg.dim));
        batch.labels.push_back(targets.objects[j].category);
      }
    }
    if (batch.queries.size() >= max_queries) break;
  }
  return batch;
}

namespace {

std::vector<double> true_logits(const model::Model& model, const std::vector<std::vector<double>>& queries,
                                const std::vector<std::size_t>& labels) {
  const std::size_t n = queries.size(), d = model.config().dim;
  Tape tape;
  std::vector<double> flat;
  flat.reserve(n * d);
  for (const auto& q : queries) flat.insert(flat.end(), q.begin(), q.end());
  const Tensor obj = tape.constant(Shape{n, d}, std::move(flat));
  const Tensor ref = tape.constant(Shape{n, 3}, std::vector<double>(n * 3, 0.0));
  const auto boxes = model.box_head()(tape, obj, ref);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = boxes.logits.at(i, labels[i]);
  return out;
}

}  // namespace

std::vector<double> permutation_importance(const model::Model& model, const QueryBatch& batch, std::size_t repeats,
                                           std::uint64_t seed) {
  const std::size_t n = batch.queries.size(), d = model.config().dim;
  if (n < 8) throw std::invalid_argument("attribution needs at least 8 positive queries");
  if (repeats == 0) throw std::invalid_argument("attribution needs at least one permutation");
  const auto base = true_logits(model, batch.queries, batch.labels);
  std::vector<double> importance(d, 0.0);
  Rng rng(seed);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < repeats; ++r) {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
      auto permuted = batch.queries;
      for (std::size_t i = 0; i < n; ++i) permuted[i][j] = batch.queries[perm[i]][j];
      const auto logits = true_logits(model, permuted, batch.labels);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::abs(logits[i] - base[i]);
      importance[j] += s / static_cast<double>(n);
    }
    importance[j] /= static_cast<double>(repeats);
  }
  return importance;
}

double gini(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("gini of an empty vector");
  double total = 0.0;
  for (double v : values) {
    if (v < 0.0) throw std::invalid_argument("gini needs nonnegative values");
    total += v;
  }
  if (total == 0.0) return 0.0;
  // Mean absolute difference over all ordered pairs via the sorted form.
  std::vector<double> s = values;
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  // Mirrored ranks share a weight, so each term is a nonnegative difference
  // and equal values cancel exactly.
  double weighted = 0.0;
  for (std::size_t i = 0, j = s.size() - 1; i < j; ++i, --j)
    weighted += (n - 1.0 - 2.0 * static_cast<double>(i)) * (s[j] - s[i]);
  return std::min(1.0, weighted / (n * total));
}

AttributionReport attribution(const model::Model& stage1, const model::Model& stage2,
                              const std::vector<sim::Episode>& episodes, std::size_t repeats, std::uint64_t seed,
                              std::size_t max_queries) {
  AttributionReport r;
  r.stage1 = permutation_importance(stage1, collect_positive_queries(stage1, episodes, max_queries), repeats, seed);
  r.stage2 = permutation_importance(stage2, collect_positive_queries(stage2, episodes, max_queries), repeats, seed);
  r.gini1 = gini(r.stage1);
  r.gini2 = gini(r.stage2);
  for (std::size_t j = 0; j < r.stage1.size(); ++j) r.difference.push_back(r.stage1[j] - r.stage2[j]);
  return r;
}

}  // namespace dmad::eval
