#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmad/model/model.hpp"
#include "dmad/sim/serialize.hpp"
#include "dmad/train/losses.hpp"

namespace dmad::train {

inline constexpr int kTrainSchema = 1;

struct StageConfig {
  int stage = 1;
  std::size_t queue_length = 3;
  std::size_t steps = 200;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  // Loss families trained in this stage.
  std::vector<std::string> losses() const;
};

struct TrainConfig {
  model::ModelConfig model;
  StageConfig stage1{1};
  StageConfig stage2{2};
  LossWeights loss;
  MatchWeights match;
  double clip_norm = 5.0;
  // Run the per-family gradient audit every this many steps (0: never).
  std::size_t audit_every = 0;

  // Ablation switches: the same knobs as the JSON fields of the same names.
  std::size_t queue_length() const { return stage1.queue_length; }
  void set_queue_length(std::size_t q);

  const StageConfig& stage(int s) const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Schema-checked; missing keys keep their defaults and unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig read_train_config(const std::filesystem::path& path);
std::string config_hash(const TrainConfig& c);
// One seed for the whole run: initialization, stage-1 sampling and a
// distinct stage-2 sampling stream.
TrainConfig with_seed(TrainConfig c, std::uint64_t seed);

// Copies the world geometry (dt, extent, grid) into the model config.
model::ModelConfig bind_world(model::ModelConfig m, const sim::WorldConfig& w);

struct Dataset {
  sim::WorldConfig config;
  std::string config_hash;
  std::vector<sim::Episode> episodes;
};
Dataset load_dataset(const std::filesystem::path& dir);
Dataset make_dataset(const sim::WorldConfig& config, std::uint64_t first, std::uint64_t last);

inline const std::vector<std::string> kLossFamilies = {"detection", "map", "unimodal", "multimodal", "planning"};
inline const std::vector<std::string> kParameterGroups = {model::kEncoderGroup, model::kSemanticGroup,
                                                          model::kMotionGroup, model::kInteractionGroup};

// Parameters that only stage 2 can move, by name prefix.
std::vector<std::string> stage2_only_prefixes(const model::ModelConfig& cfg);

// Loss terms of one unrolled training sample, summed over its frames.
struct SampleLoss {
  std::map<std::string, Tensor> families;
  Tensor total;
  std::size_t frames = 0;
  std::size_t matched = 0;
};

// Unrolls q frames of `ep` starting at t0 with query propagation in training
// mode. Gradients flow through carried queries inside the sample only.
SampleLoss unroll_sample(Tape& tape, const model::Model& model, const sim::Episode& ep, int t0, std::size_t q,
                         bool stage2, const TrainConfig& cfg);

// Gradient norm of every parameter group under each loss family on its own.
using GradientAudit = std::map<std::string, std::map<std::string, double>>;
GradientAudit audit_gradients(model::Model& model, const sim::Episode& ep, int t0, std::size_t q, bool stage2,
                              const TrainConfig& cfg);
// True when the audit shows the expected separation for the wiring: divided
// has zero semantic gradient under motion losses and zero motion gradient
// under semantic losses; sequential has nonzero semantic gradient under motion losses.
bool audit_separated(const GradientAudit& audit, const model::ModelConfig& cfg, bool stage2);

struct StepRecord {
  int stage = 1;
  std::size_t step = 0;
  std::uint64_t episode = 0;
  int t0 = 0;
  double loss = 0.0;
  std::map<std::string, double> terms;
  std::optional<GradientAudit> audit;

  nlohmann::json to_json() const;
};

// Runs one stage in place on `model`. Each step appends one JSON line to
// `log` when given.
std::vector<StepRecord> train_stage(model::Model& model, const Dataset& data, const TrainConfig& cfg, int stage,
                                    std::ostream* log);

struct TrainResult {
  std::filesystem::path stage1;
  std::filesystem::path stage2;
  std::filesystem::path log;
};

// Stage 1 from initialization, then stage 2 from the stage-1 checkpoint, with
// checkpoints `stage1`/`stage2` and `train_log.jsonl` written under `dir`.
TrainResult train_two_stage(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& dir);

// One stage into `dir`. Stage 2 loads `dir/stage1` and throws if it is absent.
std::filesystem::path run_stage(const TrainConfig& cfg, const Dataset& data, int stage,
                                const std::filesystem::path& dir);

}  // namespace dmad::train
