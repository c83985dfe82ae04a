#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dmad/eval/runner.hpp"

namespace dmad::eval {

struct RolloutTrace {
  std::uint64_t seed = 0;
  std::vector<Vec2> ego_positions;  // one per executed step, after the step
  std::vector<bool> collisions;
  double progress = 0.0;            // distance travelled along the ego lane (m)
};

struct RolloutMetrics {
  std::size_t episodes = 0;
  std::size_t steps = 0;
  std::optional<double> collision_rate;  // percent of episodes with any collision
  std::optional<double> mean_progress;
};

// Closed loop: observe, decode, plan, execute the first waypoint, repeat for
// `horizon` steps. Without a model the expert drives.
RolloutTrace rollout(const model::Model* model, std::uint64_t seed, const sim::WorldConfig& world, int horizon,
                     const InferenceOptions& opt = {});

RolloutMetrics summarize(const std::vector<RolloutTrace>& traces);

}  // namespace dmad::eval
