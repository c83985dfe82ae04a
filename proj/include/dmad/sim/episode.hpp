#pragma once

#include <cstdint>
#include <vector>

#include "dmad/sim/world.hpp"

namespace dmad::sim {

// Frame-local observation on a G x G grid over the world square. Each cell
// carries kFeatures values:
//   0 occupancy count (object hits plus clutter)
//   1,2 mean in-cell offset of the hits from the cell center, in cell units
//   3,4 vehicle / pedestrian hit counts
//   5 map sample count
// There is deliberately no velocity channel.
struct SensorTokenSet {
  static constexpr std::size_t kFeatures = 6;
  enum Channel : std::size_t {
    kOccupancy = 0,
    kOffsetX = 1,
    kOffsetY = 2,
    kVehicleHits = 3,
    kPedestrianHits = 4,
    kMapSamples = 5
  };

  int grid = 0;
  double cell_size = 0.0;
  std::vector<double> features;  // grid*grid x kFeatures, row-major
  std::vector<Vec2> centers;     // grid*grid

  std::size_t token_count() const { return centers.size(); }
  double at(std::size_t cell, std::size_t channel) const { return features[cell * kFeatures + channel]; }
};

// Cell index containing `p`, or -1 outside the world square.
int cell_of(Vec2 p, int grid, double half_size);

// Map sample counts per cell: each polyline sampled every 1 m along its length.
std::vector<double> rasterize_map(const MapData& map, int grid, double half_size);

SensorTokenSet observe(const WorldState& world, const MapData& map, int grid, double half_size,
                       const NoiseConfig& noise, std::uint64_t seed);

struct Episode {
  std::uint64_t seed = 0;
  WorldConfig config;
  double cruise_speed = 0.0;
  MapData map;
  // frames + future_frames simulated states; only the first `frames` are observed.
  std::vector<WorldState> states;
  std::vector<SensorTokenSet> tokens;

  int frames() const { return config.frames; }
};

Episode gen_episode(std::uint64_t seed, const WorldConfig& config);

// Seed of the observation noise stream for frame `t` of episode `seed`.
std::uint64_t observation_seed(std::uint64_t episode_seed, int frame);

// Stateful world for closed-loop driving: the ego follows external actions
// while objects keep their scripted behavior and lifecycle.
class WorldSim {
 public:
  WorldSim(std::uint64_t seed, const WorldConfig& config);

  const WorldState& state() const { return state_; }
  const MapData& map() const { return map_; }
  double cruise_speed() const { return cruise_; }
  const WorldConfig& config() const { return config_; }
  SensorTokenSet observe_current() const;
  void step(Vec2 ego_action);

 private:
  friend Episode gen_episode(std::uint64_t, const WorldConfig&);

  std::uint64_t seed_;
  WorldConfig config_;
  Rng rng_;
  MapData map_;
  double cruise_;
  WorldState state_;
  int next_id_ = 0;
};

}  // namespace dmad::sim
