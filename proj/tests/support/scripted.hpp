#pragma once

// Hand-built episodes and dumps for metric tests.

#include <vector>

#include "dmad/eval/runner.hpp"
#include "dmad/sim/episode.hpp"

namespace dmad::testing {

// Static objects at `positions` (vehicles, 2 x 4.5 m, heading 0) for `frames`
// observed frames plus `future` extra ones; ego parked far away with a plan
// of `plan` straight waypoints at `speed` m/s.
inline sim::Episode static_episode(const std::vector<sim::Vec2>& positions, int frames, int future,
                                   double speed = 5.0, int plan = 6) {
  sim::Episode ep;
  ep.config.frames = frames;
  ep.config.future_frames = future;
  for (int t = 0; t < frames + future; ++t) {
    sim::WorldState s;
    s.frame = t;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      sim::ObjectTruth o;
      o.id = static_cast<int>(i);
      o.position = positions[i];
      o.width = 2.0;
      o.length = 4.5;
      o.height = sim::kVehicleHeight;
      s.objects.push_back(o);
    }
    s.ego.position = {-40.0 + speed * 0.5 * t, -40.0};
    for (int k = 1; k <= plan; ++k) s.expert_plan.push_back({s.ego.position.x + speed * 0.5 * k, -40.0});
    ep.states.push_back(s);
  }
  return ep;
}

inline eval::Detection detection_at(sim::Vec2 p, int id, double score, int label = 0) {
  eval::Detection d;
  d.id = id;
  d.label = label;
  d.score = score;
  d.center = {p.x, p.y, 0.0};
  d.size = {2.0, sim::kVehicleHeight, 4.5};
  return d;
}

}  // namespace dmad::testing
