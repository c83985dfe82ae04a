#include "dmad/sim/episode.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace dmad::sim {
namespace {

struct Road {
  Vec2 center;
  Vec2 dir;
  Vec2 normal;  // left of dir
  double half_length = 0.0;
};

Road road_of(const MapData& map) {
  // The first polyline is always the divider of the main road.
  const auto& v = map.polylines.front().vertices;
  Road r;
  r.center = (v.front() + v.back()) * 0.5;
  const Vec2 d = v.back() - v.front();
  r.half_length = 0.5 * d.norm();
  r.dir = d * (1.0 / d.norm());
  r.normal = {-r.dir.y, r.dir.x};
  return r;
}

std::array<Vec2, kPolylineVertices> line(Vec2 a, Vec2 b) {
  std::array<Vec2, kPolylineVertices> out;
  for (std::size_t i = 0; i < kPolylineVertices; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(kPolylineVertices - 1);
    out[i] = a + (b - a) * t;
  }
  return out;
}

// One straight two-lane road through the middle of the world with boundaries,
// a center divider and pedestrian crossings.
MapData gen_map(const WorldConfig& cfg, Rng& rng) {
  const double R = cfg.world_half_size;
  MapData map;
  const double w = map.lane_width;
  const Vec2 c{rng.uniform(-0.1 * R, 0.1 * R), rng.uniform(-0.1 * R, 0.1 * R)};
  const double heading = rng.uniform(-M_PI, M_PI);
  const Vec2 dir = unit(heading);
  const Vec2 nrm{-dir.y, dir.x};
  const double L = 0.8 * R;

  std::vector<MapPolyline> candidates;
  candidates.push_back({MapCategory::kLaneDivider, line(c - dir * L, c + dir * L)});
  candidates.push_back({MapCategory::kBoundary, line(c - dir * L + nrm * w, c + dir * L + nrm * w)});
  candidates.push_back({MapCategory::kBoundary, line(c - dir * L - nrm * w, c + dir * L - nrm * w)});
  const int crossings = std::max(0, cfg.map_polylines - 3);
  std::vector<double> used;
  for (int k = 0; k < crossings; ++k) {
    double a = 0.0;
    for (int attempt = 0; attempt < 100; ++attempt) {
      a = rng.uniform(-0.6 * L, 0.6 * L);
      const bool clear = std::none_of(used.begin(), used.end(), [&](double u) { return std::abs(u - a) < 8.0; });
      if (clear) break;
    }
    used.push_back(a);
    const Vec2 mid = c + dir * a;
    candidates.push_back({MapCategory::kCrossing, line(mid - nrm * (w + 1.0), mid + nrm * (w + 1.0))});
  }
  candidates.resize(static_cast<std::size_t>(std::min<int>(cfg.map_polylines, static_cast<int>(candidates.size()))));
  map.polylines = std::move(candidates);

  // Centerlines run past the world edge so the expert can plan near the border.
  const double ext = 2.0 * R;
  map.lanes.push_back({{c - dir * ext - nrm * (0.5 * w), c + dir * ext - nrm * (0.5 * w)}});
  map.lanes.push_back({{c + dir * ext + nrm * (0.5 * w), c - dir * ext + nrm * (0.5 * w)}});
  map.ego_lane = 0;
  return map;
}

bool inside(Vec2 p, double R) { return std::abs(p.x) <= R && std::abs(p.y) <= R; }

ObjectTruth make_vehicle(Rng& rng) {
  ObjectTruth o;
  o.category = Category::kVehicle;
  o.width = rng.uniform(1.7, 2.1);
  o.length = rng.uniform(4.0, 5.0);
  o.height = kVehicleHeight;
  return o;
}

ObjectTruth make_pedestrian(Rng& rng) {
  ObjectTruth o;
  o.category = Category::kPedestrian;
  o.width = rng.uniform(0.5, 0.8);
  o.length = o.width;
  o.height = kPedestrianHeight;
  return o;
}

void set_linear_motion(ObjectTruth& o, double heading, double speed, Rng& rng, bool allow_stop_and_go) {
  o.heading = wrap_angle(heading);
  if (allow_stop_and_go && rng.bernoulli(0.3)) {
    o.behavior = Behavior::kStopAndGo;
    o.peak_speed = speed;
    o.period = rng.uniform(4.0, 8.0);
    o.phase = rng.uniform(0.0, o.period);
    o.velocity = unit(o.heading) * (0.5 * o.peak_speed * (1.0 - std::cos(2.0 * M_PI * o.phase / o.period)));
  } else {
    o.behavior = Behavior::kConstantVelocity;
    o.velocity = unit(o.heading) * speed;
  }
}

// Spawn a scripted object that never enters the ego corridor except as a
// same-direction lead vehicle far enough ahead to brake for.
std::optional<ObjectTruth> spawn(const WorldConfig& cfg, const MapData& map, const WorldState& world,
                                 double cruise, Rng& rng) {
  const Road road = road_of(map);
  const double w = map.lane_width;
  const double R = cfg.world_half_size;
  const PolylinePath ego_lane(map.lanes[map.ego_lane].centerline);
  const double ego_s = ego_lane.project(world.ego.position).first;
  const double road_heading = std::atan2(road.dir.y, road.dir.x);

  const double kind = rng.uniform();
  ObjectTruth o;
  if (kind < 0.2) {
    // Lead vehicle in the ego lane, same direction, no faster than the ego cruise.
    o = make_vehicle(rng);
    const double s = ego_s + rng.uniform(25.0, 55.0);
    o.position = ego_lane.at(s);
    set_linear_motion(o, road_heading, rng.uniform(0.0, cruise), rng, true);
  } else if (kind < 0.5) {
    o = make_vehicle(rng);
    const double a = rng.uniform(-road.half_length, road.half_length);
    o.position = road.center + road.dir * a + road.normal * (0.5 * w);
    set_linear_motion(o, road_heading + M_PI, rng.uniform(3.0, 10.0), rng, true);
  } else if (kind < 0.8) {
    o = make_pedestrian(rng);
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double a = rng.uniform(-road.half_length, road.half_length);
    o.position = road.center + road.dir * a + road.normal * (side * rng.uniform(w + 1.5, w + 5.0));
    const double dir = rng.bernoulli(0.5) ? 0.0 : M_PI;
    set_linear_motion(o, road_heading + dir, rng.uniform(0.5, 1.8), rng, true);
  } else {
    // Circling object well clear of the road.
    o = rng.bernoulli(0.5) ? make_vehicle(rng) : make_pedestrian(rng);
    const double speed = o.category == Category::kVehicle ? rng.uniform(2.0, 6.0) : rng.uniform(0.5, 1.5);
    const double radius_target = o.category == Category::kVehicle ? rng.uniform(4.0, 8.0) : rng.uniform(1.5, 4.0);
    const int steps = std::max(4, static_cast<int>(std::lround(2.0 * M_PI * radius_target / (speed * cfg.dt))));
    o.yaw_rate = 2.0 * M_PI / (steps * cfg.dt) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    const double radius = speed / std::abs(o.yaw_rate);
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double a = rng.uniform(-road.half_length, road.half_length);
    const Vec2 centre = road.center + road.dir * a +
                        road.normal * (side * (w + 3.0 + radius + 0.5 * o.length));
    const double ang = rng.uniform(-M_PI, M_PI);
    o.position = centre + unit(ang) * radius;
    o.behavior = Behavior::kConstantTurn;
    o.heading = wrap_angle(ang + (o.yaw_rate > 0 ? M_PI / 2 : -M_PI / 2));
    o.velocity = unit(o.heading) * speed;
  }
  o.height = category_height(o.category);
  if (!inside(o.position, R)) return std::nullopt;
  if (boxes_overlap(o.box(), world.ego.box())) return std::nullopt;
  OrientedBox padded = o.box();
  padded.width += 1.0;
  padded.length += 1.0;
  for (const auto& other : world.objects) {
    if (boxes_overlap(padded, other.box())) return std::nullopt;
  }
  return o;
}

bool try_spawn(WorldState& world, const WorldConfig& cfg, const MapData& map, double cruise, Rng& rng,
               int& next_id) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    if (auto o = spawn(cfg, map, world, cruise, rng)) {
      o->id = next_id++;
      o->birth_frame = world.frame;
      world.objects.push_back(*o);
      return true;
    }
  }
  return false;
}

// Despawn objects that left the world, then one Bernoulli birth, then refill
// up to the minimum count.
void lifecycle(WorldState& world, const WorldConfig& cfg, const MapData& map, double cruise, Rng& rng,
               int& next_id) {
  const double R = cfg.world_half_size;
  std::erase_if(world.objects, [&](const ObjectTruth& o) { return !inside(o.position, R); });
  const bool birth = rng.bernoulli(cfg.birth_prob);
  if (birth && static_cast<int>(world.objects.size()) < cfg.max_objects) {
    try_spawn(world, cfg, map, cruise, rng, next_id);
  }
  while (static_cast<int>(world.objects.size()) < cfg.min_objects) {
    if (!try_spawn(world, cfg, map, cruise, rng, next_id)) break;
  }
}

}  // namespace

int cell_of(Vec2 p, int grid, double half_size) {
  if (!inside(p, half_size)) return -1;
  const double cell = 2.0 * half_size / grid;
  const int cx = std::min(grid - 1, static_cast<int>(std::floor((p.x + half_size) / cell)));
  const int cy = std::min(grid - 1, static_cast<int>(std::floor((p.y + half_size) / cell)));
  return cy * grid + cx;
}

std::vector<double> rasterize_map(const MapData& map, int grid, double half_size) {
  std::vector<double> counts(static_cast<std::size_t>(grid * grid), 0.0);
  for (const auto& pl : map.polylines) {
    const PolylinePath path(std::vector<Vec2>(pl.vertices.begin(), pl.vertices.end()));
    const int samples = static_cast<int>(std::floor(path.length())) + 1;
    for (int k = 0; k < samples; ++k) {
      const int cell = cell_of(path.at(static_cast<double>(k)), grid, half_size);
      if (cell >= 0) counts[static_cast<std::size_t>(cell)] += 1.0;
    }
  }
  return counts;
}

SensorTokenSet observe(const WorldState& world, const MapData& map, int grid, double half_size,
                       const NoiseConfig& noise, std::uint64_t seed) {
  if (noise.position_sigma < 0.0) throw std::invalid_argument("observe: negative position sigma");
  SensorTokenSet out;
  out.grid = grid;
  out.cell_size = 2.0 * half_size / grid;
  const std::size_t cells = static_cast<std::size_t>(grid * grid);
  out.features.assign(cells * SensorTokenSet::kFeatures, 0.0);
  out.centers.resize(cells);
  for (int cy = 0; cy < grid; ++cy) {
    for (int cx = 0; cx < grid; ++cx) {
      out.centers[static_cast<std::size_t>(cy * grid + cx)] = {-half_size + (cx + 0.5) * out.cell_size,
                                                               -half_size + (cy + 0.5) * out.cell_size};
    }
  }

  Rng rng(seed);
  std::vector<Vec2> offset_sum(cells);
  auto hit = [&](Vec2 p, Category cat) {
    const int cell = cell_of(p, grid, half_size);
    if (cell < 0) return;
    const auto c = static_cast<std::size_t>(cell);
    double* f = &out.features[c * SensorTokenSet::kFeatures];
    f[SensorTokenSet::kOccupancy] += 1.0;
    f[cat == Category::kVehicle ? SensorTokenSet::kVehicleHits : SensorTokenSet::kPedestrianHits] += 1.0;
    offset_sum[c] += (p - out.centers[c]) * (1.0 / out.cell_size);
  };
  for (const auto& o : world.objects) {
    // Draw both variates unconditionally so the stream layout does not depend on outcomes.
    const bool missed = rng.uniform() < noise.miss_prob;
    const Vec2 jitter{rng.normal(), rng.normal()};
    if (missed) continue;
    hit(o.position + jitter * noise.position_sigma, o.category);
  }
  const int clutter = rng.poisson(noise.clutter_rate);
  for (int k = 0; k < clutter; ++k) {
    const Vec2 p{rng.uniform(-half_size, half_size), rng.uniform(-half_size, half_size)};
    hit(p, rng.bernoulli(0.5) ? Category::kVehicle : Category::kPedestrian);
  }
  const auto map_counts = rasterize_map(map, grid, half_size);
  for (std::size_t c = 0; c < cells; ++c) {
    double* f = &out.features[c * SensorTokenSet::kFeatures];
    if (f[SensorTokenSet::kOccupancy] > 0.0) {
      f[SensorTokenSet::kOffsetX] = offset_sum[c].x / f[SensorTokenSet::kOccupancy];
      f[SensorTokenSet::kOffsetY] = offset_sum[c].y / f[SensorTokenSet::kOccupancy];
    }
    f[SensorTokenSet::kMapSamples] = map_counts[c];
  }
  return out;
}

std::uint64_t observation_seed(std::uint64_t episode_seed, int frame) {
  return Rng::derive(episode_seed, 0x0b5e0000ULL + static_cast<std::uint64_t>(frame)).next_u64();
}

WorldSim::WorldSim(std::uint64_t seed, const WorldConfig& config)
    : seed_(seed), config_(config), rng_(seed) {
  config_.validate();
  map_ = gen_map(config_, rng_);
  cruise_ = rng_.uniform(config_.cruise_speed_min, config_.cruise_speed_max);
  const PolylinePath lane(map_.lanes[map_.ego_lane].centerline);
  const Road road = road_of(map_);
  const double origin = lane.project(road.center).first;
  const double start = origin + rng_.uniform(-0.7, -0.5) * config_.world_half_size;
  state_.frame = 0;
  state_.ego.position = lane.at(start);
  const Vec2 t = lane.tangent(start);
  state_.ego.heading = std::atan2(t.y, t.x);
  state_.ego.velocity = t * cruise_;
  const int initial = static_cast<int>(rng_.uniform_int(config_.min_objects, config_.max_objects));
  for (int k = 0; k < initial; ++k) try_spawn(state_, config_, map_, cruise_, rng_, next_id_);
}

SensorTokenSet WorldSim::observe_current() const {
  return observe(state_, map_, config_.grid, config_.world_half_size, config_.noise,
                 observation_seed(seed_, state_.frame));
}

void WorldSim::step(Vec2 ego_action) {
  state_ = step_world(state_, ego_action, config_.dt, config_.ego);
  lifecycle(state_, config_, map_, cruise_, rng_, next_id_);
}

Episode gen_episode(std::uint64_t seed, const WorldConfig& config) {
  WorldSim sim(seed, config);
  Episode ep;
  ep.seed = seed;
  ep.config = sim.config_;
  ep.cruise_speed = sim.cruise_;
  ep.map = sim.map_;
  const int total = config.frames + config.future_frames;
  for (int t = 0; t < total; ++t) {
    WorldState s = sim.state();
    s.expert_plan = expert_plan(s, sim.map(), sim.cruise_, config.plan_steps, config.dt, config.ego);
    ep.states.push_back(s);
    if (t + 1 < total) sim.step(s.expert_plan.front());
  }
  for (int t = 0; t < config.frames; ++t) {
    ep.tokens.push_back(observe(ep.states[static_cast<std::size_t>(t)], ep.map, config.grid,
                                config.world_half_size, config.noise, observation_seed(seed, t)));
  }
  return ep;
}

}  // namespace dmad::sim
