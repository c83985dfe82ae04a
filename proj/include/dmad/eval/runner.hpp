#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmad/model/model.hpp"
#include "dmad/sim/episode.hpp"
#include "dmad/tracker/tracker.hpp"

namespace dmad::eval {

using model::Point3;
using sim::Vec2;

// One object query slot of a decoded frame. Every slot is kept so detection AP
// can sweep the full score range; only positive slots carry an id and
// trajectories.
struct Detection {
  std::size_t slot = 0;
  int id = -1;
  int label = 0;  // 0 vehicle, 1 pedestrian
  double score = 0.0;
  Point3 center{};
  std::array<double, 3> size{};  // w, h, l
  double heading = 0.0;
  Vec2 velocity;
  std::vector<std::vector<Vec2>> trajectories;  // K x T, absolute positions
  std::vector<double> mode_confidences;
};

struct MapDetection {
  int label = 0;
  double score = 0.0;
  std::vector<Vec2> vertices;
};

struct FrameDump {
  int frame = 0;
  std::vector<Detection> detections;
  std::vector<MapDetection> map;
  std::vector<Vec2> plan;
};

struct EpisodeDump {
  std::uint64_t seed = 0;
  std::vector<FrameDump> frames;
};

struct InferenceOptions {
  tracker::PropagationPolicy policy;
  bool motion_heads = true;
};

// Decodes every observed frame with query propagation in inference mode.
// Propagated queries enter each frame as constants (a fresh tape per frame).
EpisodeDump run_episode(const model::Model& model, const sim::Episode& ep, const InferenceOptions& opt);

// Per-slot tensors of a decoded frame, also used by the closed-loop runner.
struct FrameDecoder {
  const model::Model* model = nullptr;
  InferenceOptions options;
  tracker::TrackSet tracks;
  // Last center per track id, for the bbox-difference velocity.
  std::vector<std::pair<int, Vec2>> last_centers;

  FrameDump decode(const sim::SensorTokenSet& tokens, Vec2 ego_position, int frame);
};

// Ground truth formatted as a prediction dump: every object with score 1, a
// single mode equal to its true future, the expert plan, and the true map.
EpisodeDump oracle_dump(const sim::Episode& ep, std::size_t future_steps, std::size_t plan_steps);

nlohmann::json to_json(const FrameDump& f);
FrameDump frame_dump_from_json(const nlohmann::json& j);

// One JSON line per frame, each tagged with the episode seed.
void write_dump(const EpisodeDump& dump, const std::filesystem::path& path);
EpisodeDump read_dump(const std::filesystem::path& path);

}  // namespace dmad::eval
