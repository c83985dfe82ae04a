#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace dmad::model {

enum class Architecture { kDivided, kSequential };

enum class VelocityMode { kRegressFromObj, kBboxDifference, kRegressFromMt, kDeriveFromUnimodal };

const char* to_string(Architecture a);
const char* to_string(VelocityMode m);
Architecture architecture_from(const std::string& s);
VelocityMode velocity_mode_from(const std::string& s);

struct Interactions {
  bool obj_map = true;
  bool obj_mt = false;
  bool mt_map = false;

  bool touches_motion() const { return obj_mt || mt_map; }
  bool operator==(const Interactions&) const = default;
};

inline constexpr std::size_t kObjectClasses = 3;  // vehicle, pedestrian, background
inline constexpr std::size_t kBackground = 2;
inline constexpr std::size_t kMapClasses = 4;     // divider, crossing, boundary, background
inline constexpr std::size_t kMapBackground = 3;

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t layers = 6;
  std::size_t num_obj = 32;
  std::size_t num_map = 16;
  std::size_t modes = 6;
  std::size_t past_steps = 4;
  double unimodal_horizon_s = 4.0;
  std::size_t multimodal_steps = 12;
  std::size_t plan_steps = 6;
  std::size_t fourier_bands = 4;
  double dt = 0.5;
  double world_half_size = 50.0;
  int grid = 16;
  Architecture architecture = Architecture::kDivided;
  Interactions interactions;
  VelocityMode velocity_mode = VelocityMode::kDeriveFromUnimodal;
  std::uint64_t init_seed = 1;

  std::size_t future_steps() const {
    return static_cast<std::size_t>(std::lround(unimodal_horizon_s / dt));
  }
  std::size_t waypoints() const { return past_steps + future_steps() + 1; }
  std::size_t box_width() const {
    return 3 + 3 + 2 + kObjectClasses + (velocity_mode == VelocityMode::kRegressFromObj ? 2 : 0);
  }
  std::size_t fourier_width() const { return 4 * fourier_bands; }
  // Regression heads emit positions in units of one token cell.
  double regression_scale() const { return 2.0 * world_half_size / grid; }
  bool has_motion_decoder() const { return architecture == Architecture::kDivided; }

  // Throws std::invalid_argument for inconsistent settings.
  void validate() const;
};

// Switches the wiring. Sequential drops motion-query interactions and
// regresses velocity from object queries, the only source it has.
ModelConfig with_architecture(ModelConfig c, Architecture a);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace dmad::model
