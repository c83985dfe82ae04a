#include "dmad/eval/rollout.hpp"

#include <stdexcept>

namespace dmad::eval {

RolloutTrace rollout(const model::Model* model, std::uint64_t seed, const sim::WorldConfig& world, int horizon,
                     const InferenceOptions& opt) {
  if (horizon < 0) throw std::invalid_argument("rollout horizon must be nonnegative");
  sim::WorldSim sim(seed, world);
  RolloutTrace trace;
  trace.seed = seed;
  const sim::PolylinePath lane(sim.map().lanes.at(sim.map().ego_lane).centerline);
  const double s0 = lane.project(sim.state().ego.position).first;
  std::optional<FrameDecoder> decoder;
  if (model) {
    InferenceOptions o = opt;
    o.motion_heads = true;
    decoder.emplace(FrameDecoder{model, o, {}, {}});
  }
  for (int t = 0; t < horizon; ++t) {
    Vec2 action;
    if (decoder) {
      const auto tokens = sim.observe_current();
      const auto dump = decoder->decode(tokens, sim.state().ego.position, t);
      if (dump.plan.empty()) throw std::logic_error("rollout: model produced no plan");
      action = dump.plan.front();
    } else {
      action = sim::expert_plan(sim.state(), sim.map(), sim.cruise_speed(), world.plan_steps, world.dt, world.ego)
                   .front();
    }
    sim.step(action);
    trace.ego_positions.push_back(sim.state().ego.position);
    trace.collisions.push_back(sim.state().ego.collision);
  }
  trace.progress = lane.project(sim.state().ego.position).first - s0;
  return trace;
}

RolloutMetrics summarize(const std::vector<RolloutTrace>& traces) {
  RolloutMetrics m;
  double progress = 0.0;
  std::size_t collided = 0;
  for (const auto& t : traces) {
    if (t.ego_positions.empty()) continue;
    ++m.episodes;
    m.steps += t.ego_positions.size();
    progress += t.progress;
    for (bool c : t.collisions)
      if (c) {
        ++collided;
        break;
      }
  }
  if (m.episodes > 0) {
    m.collision_rate = 100.0 * static_cast<double>(collided) / static_cast<double>(m.episodes);
    m.mean_progress = progress / static_cast<double>(m.episodes);
  }
  return m;
}

}  // namespace dmad::eval
