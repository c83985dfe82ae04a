#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmad/sim/episode.hpp"

namespace dmad::sim {

inline constexpr int kEpisodeSchema = 1;

nlohmann::json to_json(const WorldConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
WorldConfig world_config_from_json(const nlohmann::json& j);
WorldConfig read_world_config(const std::filesystem::path& path);
std::string config_hash(const WorldConfig& config);

nlohmann::json to_json(const Episode& episode);
Episode episode_from_json(const nlohmann::json& j);

void write_episode(const Episode& episode, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

// Generates seeds [first, last] into `dir` as episode_<seed>.json plus a
// manifest.json listing the seeds and the config hash.
void write_dataset(const WorldConfig& config, std::uint64_t first, std::uint64_t last,
                   const std::filesystem::path& dir);

struct DatasetManifest {
  std::string config_hash;
  WorldConfig config;
  std::vector<std::uint64_t> seeds;
};
DatasetManifest read_manifest(const std::filesystem::path& dir);

}  // namespace dmad::sim
