#include "dmad/sim/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmad::sim {

const char* to_string(Category c) {
  return c == Category::kVehicle ? "vehicle" : "pedestrian";
}

const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::kConstantVelocity: return "constant-velocity";
    case Behavior::kConstantTurn: return "constant-turn";
    case Behavior::kStopAndGo: return "stop-and-go";
  }
  return "?";
}

const char* to_string(MapCategory c) {
  switch (c) {
    case MapCategory::kLaneDivider: return "lane-divider";
    case MapCategory::kCrossing: return "crossing";
    case MapCategory::kBoundary: return "boundary";
  }
  return "?";
}

const ObjectTruth* WorldState::find(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

void WorldConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("world config: " + what); };
  if (frames <= 0) fail("frames must be positive");
  if (future_frames < 0) fail("future_frames must be nonnegative");
  if (!(dt > 0.0)) fail("dt must be positive");
  if (!(world_half_size >= 20.0)) fail("world_half_size must be at least 20 m");
  if (min_objects < 0 || max_objects < min_objects) fail("object count range is empty");
  if (map_polylines < 1) fail("map_polylines must be at least 1");
  if (birth_prob < 0.0 || birth_prob > 1.0) fail("birth_prob outside [0,1]");
  if (grid < 1) fail("grid must be positive");
  if (plan_steps < 1) fail("plan_steps must be positive");
  if (cruise_speed_min <= 0.0 || cruise_speed_max < cruise_speed_min ||
      cruise_speed_max > ego.max_speed)
    fail("cruise speed range infeasible");
  if (noise.position_sigma < 0.0) fail("position_sigma must be nonnegative");
  if (noise.miss_prob < 0.0 || noise.miss_prob > 1.0) fail("miss_prob outside [0,1]");
  if (noise.clutter_rate < 0.0) fail("clutter_rate must be nonnegative");
}

namespace {

void advance_object(ObjectTruth& o, double dt) {
  switch (o.behavior) {
    case Behavior::kConstantVelocity:
      o.position += o.velocity * dt;
      break;
    case Behavior::kConstantTurn: {
      const double speed = o.velocity.norm();
      const double h0 = o.heading;
      const double h1 = h0 + o.yaw_rate * dt;
      const double r = speed / o.yaw_rate;
      o.position += Vec2{std::sin(h1) - std::sin(h0), std::cos(h0) - std::cos(h1)} * r;
      o.heading = wrap_angle(h1);
      o.velocity = unit(h1) * speed;
      break;
    }
    case Behavior::kStopAndGo: {
      // speed(t) = peak * (1 - cos(2 pi t / period)) / 2, integrated exactly.
      const double w = 2.0 * M_PI / o.period;
      const double t0 = o.phase, t1 = o.phase + dt;
      const double dist = 0.5 * o.peak_speed * (dt - (std::sin(w * t1) - std::sin(w * t0)) / w);
      o.position += unit(o.heading) * dist;
      o.phase = std::fmod(t1, o.period);
      o.velocity = unit(o.heading) * (0.5 * o.peak_speed * (1.0 - std::cos(w * o.phase)));
      break;
    }
  }
}

}  // namespace

WorldState step_world(const WorldState& world, Vec2 ego_action, double dt, const EgoLimits& limits) {
  WorldState next = world;
  next.frame = world.frame + 1;
  next.expert_plan.clear();
  for (auto& o : next.objects) advance_object(o, dt);

  EgoState& ego = next.ego;
  ego.action_clipped = false;
  const Vec2 desired = ego_action - world.ego.position;
  double dist = desired.norm();
  if (dist < 1e-9) {
    ego.velocity = {0.0, 0.0};
  } else {
    const double max_turn = limits.max_yaw_rate * dt;
    double turn = wrap_angle(std::atan2(desired.y, desired.x) - world.ego.heading);
    if (std::abs(turn) > max_turn + 1e-12) {
      turn = std::clamp(turn, -max_turn, max_turn);
      ego.action_clipped = true;
    }
    const double max_dist = limits.max_speed * dt;
    if (dist > max_dist + 1e-12) {
      dist = max_dist;
      ego.action_clipped = true;
    }
    ego.heading = wrap_angle(world.ego.heading + turn);
    if (ego.action_clipped) {
      ego.position = world.ego.position + unit(ego.heading) * dist;
    } else {
      ego.position = ego_action;
    }
    ego.velocity = (ego.position - world.ego.position) * (1.0 / dt);
  }
  ego.collision = false;
  const OrientedBox ego_box = ego.box();
  for (const auto& o : next.objects) {
    if (boxes_overlap(ego_box, o.box())) {
      ego.collision = true;
      break;
    }
  }
  return next;
}

std::vector<Vec2> expert_plan(const WorldState& world, const MapData& map, double cruise_speed,
                              int steps, double dt, const EgoLimits& limits) {
  const Lane* lane = nullptr;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& l : map.lanes) {
    const double d = point_polyline_distance(world.ego.position, l.centerline);
    if (d < best) {
      best = d;
      lane = &l;
    }
  }
  if (lane == nullptr || best > 5.0) throw MapError("expert_plan: no lane within 5 m of the ego");

  const PolylinePath path(lane->centerline);
  const double s0 = path.project(world.ego.position).first;

  // Free distance to the nearest object whose box reaches into the ego
  // corridor ahead, treated as stationary.
  constexpr double kStopMargin = 1.0;
  constexpr double kCorridorMargin = 0.3;
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& o : world.objects) {
    const auto [s, lat] = path.project(o.position);
    if (s <= s0) continue;
    const Vec2 t = path.tangent(s);
    const double rel = o.heading - std::atan2(t.y, t.x);
    const double along = 0.5 * (std::abs(o.length * std::cos(rel)) + std::abs(o.width * std::sin(rel)));
    const double across = 0.5 * (std::abs(o.length * std::sin(rel)) + std::abs(o.width * std::cos(rel)));
    if (std::abs(lat) > 0.5 * kEgoWidth + kCorridorMargin + across) continue;
    gap = std::min(gap, s - s0 - 0.5 * kEgoLength - along - kStopMargin);
  }

  const double b = limits.comfort_brake;
  double v_prev = world.ego.velocity.norm();
  double travelled = 0.0;
  std::vector<Vec2> plan;
  plan.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    double v = std::min({v_prev + limits.max_accel * dt, cruise_speed, limits.max_speed});
    if (std::isfinite(gap)) {
      // Largest per-step speed whose step plus stopping distance fits:
      // v*dt + v^2/(2b) <= gap - travelled.
      const double room = gap - travelled;
      const double h = b * dt;
      const double v_stop = room > 0.0 ? -h + std::sqrt(h * h + 2.0 * b * room) : 0.0;
      v = std::min(v, v_stop);
    }
    v = std::max({v, v_prev - limits.max_brake * dt, 0.0});
    travelled += v * dt;
    plan.push_back(path.at(s0 + travelled));
    v_prev = v;
  }
  return plan;
}

}  // namespace dmad::sim
