#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmad/eval/metrics.hpp"
#include "dmad/train/trainer.hpp"

namespace dmad::eval {

// Root for run directories: $DMAD_RUNS_ROOT when set, else ./runs.
std::filesystem::path runs_root();
// Run directories are keyed by the training config and the dataset.
std::string run_key(const train::TrainConfig& cfg, const std::string& dataset_hash);
std::filesystem::path run_dir(const std::filesystem::path& root, const train::TrainConfig& cfg,
                              const std::string& dataset_hash);

std::unique_ptr<model::Model> load_model(const train::TrainConfig& cfg, const sim::WorldConfig& world,
                                         const std::filesystem::path& stem);

// A trained run directory: config.json, dataset.json and stage checkpoints.
struct Run {
  std::filesystem::path dir;
  train::TrainConfig config;
  sim::WorldConfig world;
  std::string dataset_hash;

  std::unique_ptr<model::Model> model(int stage) const;
  std::string manifest_hash(int stage) const;
};
Run open_run(const std::filesystem::path& dir);

// Decodes every episode and scores it. Dumps go to `dump_dir` when given.
MetricReport evaluate_model(const model::Model& model, const train::Dataset& data, bool motion_heads,
                            const std::string& manifest_hash,
                            const std::optional<std::filesystem::path>& dump_dir = std::nullopt);

enum class Grid { kQueue, kHorizon, kInteractions, kVelocity };
Grid grid_from(const std::string& s);
const char* to_string(Grid g);

struct AblationRow {
  std::string label;
  train::TrainConfig config;
};
std::vector<AblationRow> ablation_rows(Grid grid, const train::TrainConfig& base);

struct AblationResult {
  AblationRow row;
  MetricReport stage1, stage2;
  std::filesystem::path dir;
};
std::vector<AblationResult> run_ablation(Grid grid, const train::TrainConfig& base, const train::Dataset& train_set,
                                         const train::Dataset& eval_set, const std::filesystem::path& root);
std::string ablation_csv(Grid grid, const std::vector<AblationResult>& results);

// Train-and-evaluate of one (config, seed) pair through both stages.
struct StageScores {
  double map1 = 0.0, map2 = 0.0;
  double gini1 = 0.0, gini2 = 0.0;
};
StageScores transfer_run(const train::TrainConfig& cfg, const train::Dataset& train_set,
                         const train::Dataset& eval_set, const std::filesystem::path& dir,
                         std::size_t attribution_repeats);

}  // namespace dmad::eval
