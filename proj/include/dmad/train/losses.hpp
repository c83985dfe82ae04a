#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "dmad/model/model.hpp"
#include "dmad/sim/episode.hpp"

namespace dmad::train {

using ad::Tape;
using ad::Tensor;
using model::Point3;

struct ObjectTarget {
  int id = -1;
  std::size_t category = 0;
  Point3 center{};
  std::array<double, 3> size{};  // w, h, l
  double heading = 0.0;
  sim::Vec2 velocity;
};

struct MapTarget {
  std::size_t category = 0;
  std::array<double, 2 * sim::kPolylineVertices> vertices{};
};

// Everything a frame is supervised with, extracted from the episode.
struct FrameTargets {
  int frame = 0;
  std::vector<ObjectTarget> objects;
  std::vector<MapTarget> map;
  // Per object, aligned with `objects`: waypoints s_t for t in [-past, future]
  // (2W values) with a 0/1 mask per value; steps outside the object's life
  // are masked out.
  std::vector<std::vector<double>> unimodal, unimodal_mask;
  // Per object: the next multimodal_steps positions and their mask.
  std::vector<std::vector<double>> future, future_mask;
  sim::Vec2 ego_position;
  std::vector<sim::Vec2> expert_plan;
  // Object boxes at each plan step, for the safety hinge.
  std::vector<std::vector<sim::OrientedBox>> plan_step_boxes;
};

FrameTargets make_targets(const sim::Episode& ep, int frame, const model::ModelConfig& cfg);

struct MatchWeights {
  double cls = 2.0;
  double center = 0.25;
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query slot, target index), sorted by slot
  std::vector<std::size_t> unmatched_queries;
  std::vector<std::size_t> unmatched_targets;
  double cost = 0.0;

  std::vector<std::size_t> matched_queries() const;
};

// cost = cls * (1 - p(gt category)) + center * |center - gt center|_1.
// `pre_assigned` pairs (slot, instance id) are kept whenever the instance is
// present; the Hungarian solver handles the rest.
MatchResult match_objects(const std::vector<double>& probs, const std::vector<double>& centers,
                          std::size_t num_queries, const FrameTargets& targets,
                          const std::vector<std::pair<std::size_t, int>>& pre_assigned,
                          const MatchWeights& weights);

// Polyline L1 (mean per vertex) under the better of the two vertex orders.
double polyline_l1(const double* pred, const MapTarget& gt, bool* flipped = nullptr);
MatchResult match_map(const std::vector<double>& probs, const std::vector<double>& vertices, std::size_t num_queries,
                      const FrameTargets& targets, const MatchWeights& weights);

struct LossWeights {
  double detection = 1.0;
  double map = 1.0;
  double unimodal = 0.5;
  double multimodal = 0.5;
  double planning = 1.0;
  double background = 0.2;  // class weight of background targets
  double box_reg = 0.25;
  double map_reg = 0.25;
  double safety_radius = 0.5;
};

struct LossTerms {
  Tensor detection;
  Tensor map;
  Tensor unimodal;
  Tensor multimodal;  // empty unless motion heads ran
  Tensor planning;

  // Weighted sum of the terms active in the stage.
  Tensor total(const LossWeights& w, bool stage2) const;
};

LossTerms compute_losses(Tape& tape, const model::FrameOutput& out, const FrameTargets& targets,
                         const MatchResult& objects, const MatchResult& map, const model::ModelConfig& cfg,
                         const LossWeights& weights);

// Per-slot detection confidence: the larger non-background class probability.
std::vector<double> confidences(const Tensor& logits);
std::vector<double> class_probabilities(const Tensor& logits);

// Individual loss families, exposed for tests.
Tensor weighted_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<std::size_t>& labels,
                              const std::vector<double>& weights);
// Winner-take-all: min over modes of the masked mean L1, plus -log c_best.
Tensor multimodal_loss(Tape& tape, const Tensor& traj_row, const Tensor& conf_row, const std::vector<double>& target,
                       const std::vector<double>& mask, std::size_t modes, std::size_t* best = nullptr);
Tensor planning_loss(Tape& tape, const Tensor& plan, const std::vector<sim::Vec2>& expert,
                     const std::vector<std::vector<sim::OrientedBox>>& boxes, double safety_radius);

}  // namespace dmad::train
