#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmad/core/rng.hpp"
#include "dmad/sim/geometry.hpp"

namespace dmad::sim {

enum class Category { kVehicle = 0, kPedestrian = 1 };
inline constexpr std::size_t kNumCategories = 2;

enum class Behavior { kConstantVelocity, kConstantTurn, kStopAndGo };

enum class MapCategory { kLaneDivider = 0, kCrossing = 1, kBoundary = 2 };
inline constexpr std::size_t kNumMapCategories = 3;
inline constexpr std::size_t kPolylineVertices = 10;

const char* to_string(Category c);
const char* to_string(Behavior b);
const char* to_string(MapCategory c);

inline constexpr double kVehicleSpeedCap = 15.0;
inline constexpr double kPedestrianSpeedCap = 2.0;
inline constexpr double kVehicleHeight = 1.6;
inline constexpr double kPedestrianHeight = 1.7;

inline double speed_cap(Category c) {
  return c == Category::kVehicle ? kVehicleSpeedCap : kPedestrianSpeedCap;
}
inline double category_height(Category c) {
  return c == Category::kVehicle ? kVehicleHeight : kPedestrianHeight;
}

struct ObjectTruth {
  int id = -1;
  Category category = Category::kVehicle;
  Vec2 position;
  Vec2 velocity;
  double width = 0.0;
  double length = 0.0;
  double height = 0.0;
  double heading = 0.0;
  Behavior behavior = Behavior::kConstantVelocity;
  // Constant-turn yaw rate (rad/s).
  double yaw_rate = 0.0;
  // Stop-and-go: peak speed, cycle period (s), elapsed time within the cycle.
  double peak_speed = 0.0;
  double period = 0.0;
  double phase = 0.0;
  int birth_frame = 0;

  OrientedBox box() const { return {position, width, length, heading}; }
};

struct MapPolyline {
  MapCategory category = MapCategory::kLaneDivider;
  std::array<Vec2, kPolylineVertices> vertices;
};

struct Lane {
  std::vector<Vec2> centerline;  // ordered in the direction of travel
};

struct MapData {
  std::vector<MapPolyline> polylines;
  std::vector<Lane> lanes;
  std::size_t ego_lane = 0;
  double lane_width = 3.5;
};

inline constexpr double kEgoWidth = 1.9;
inline constexpr double kEgoLength = 4.5;

struct EgoState {
  Vec2 position;
  Vec2 velocity;
  double heading = 0.0;
  bool collision = false;
  bool action_clipped = false;

  OrientedBox box() const { return {position, kEgoWidth, kEgoLength, heading}; }
};

struct WorldState {
  int frame = 0;
  std::vector<ObjectTruth> objects;
  EgoState ego;
  // Expert waypoints from this state, one per dt.
  std::vector<Vec2> expert_plan;

  const ObjectTruth* find(int id) const;
};

struct NoiseConfig {
  double position_sigma = 0.0;
  double miss_prob = 0.0;
  double clutter_rate = 0.0;
};

struct EgoLimits {
  double max_speed = kVehicleSpeedCap;
  double max_accel = 2.5;
  double max_brake = 6.0;
  double comfort_brake = 4.0;
  double max_yaw_rate = 0.6;
};

struct WorldConfig {
  double world_half_size = 50.0;
  int frames = 12;
  // Extra simulated frames after the last observed one, used only as
  // supervision for future trajectories and plans.
  int future_frames = 12;
  double dt = 0.5;
  int min_objects = 2;
  int max_objects = 10;
  int map_polylines = 6;
  double birth_prob = 0.1;
  int grid = 16;
  int plan_steps = 6;
  double cruise_speed_min = 5.0;
  double cruise_speed_max = 8.0;
  NoiseConfig noise;
  EgoLimits ego;

  // Throws std::invalid_argument describing the first infeasible field.
  void validate() const;
};

class MapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Advances objects by their behavior model and moves the ego toward
// `ego_action` after clipping to the kinematic caps. Sets the collision flag
// when the ego box intersects any object box.
WorldState step_world(const WorldState& world, Vec2 ego_action, double dt, const EgoLimits& limits);

// Lane-following expert with braking for objects in a lookahead corridor.
// Throws MapError when no lane centerline lies within 5 m of the ego.
std::vector<Vec2> expert_plan(const WorldState& world, const MapData& map, double cruise_speed,
                              int steps, double dt, const EgoLimits& limits);

}  // namespace dmad::sim
