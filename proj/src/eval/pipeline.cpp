#include "dmad/eval/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dmad/autodiff/checkpoint.hpp"
#include "dmad/core/hash.hpp"
#include "dmad/eval/attribution.hpp"
#include "dmad/sim/serialize.hpp"

namespace dmad::eval {

std::filesystem::path runs_root() {
  if (const char* env = std::getenv("DMAD_RUNS_ROOT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

std::string run_key(const train::TrainConfig& cfg, const std::string& dataset_hash) {
  return fnv1a_hex(train::to_json(cfg).dump() + "|" + dataset_hash);
}

std::filesystem::path run_dir(const std::filesystem::path& root, const train::TrainConfig& cfg,
                              const std::string& dataset_hash) {
  return root / ("run-" + run_key(cfg, dataset_hash));
}

std::unique_ptr<model::Model> load_model(const train::TrainConfig& cfg, const sim::WorldConfig& world,
                                         const std::filesystem::path& stem) {
  auto m = std::make_unique<model::Model>(train::bind_world(cfg.model, world));
  ad::load_checkpoint(m->store(), stem);
  return m;
}

Run open_run(const std::filesystem::path& dir) {
  std::ifstream cfg_in(dir / "config.json"), data_in(dir / "dataset.json");
  if (!cfg_in || !data_in) throw std::runtime_error("not a run directory: " + dir.string());
  const auto data = nlohmann::json::parse(data_in);
  return {dir, train::train_config_from_json(nlohmann::json::parse(cfg_in)),
          sim::world_config_from_json(data.at("world")), data.at("config_hash").get<std::string>()};
}

std::unique_ptr<model::Model> Run::model(int stage) const {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  const auto stem = dir / (stage == 1 ? "stage1" : "stage2");
  if (!std::filesystem::exists(stem.string() + ".json"))
    throw std::runtime_error("missing checkpoint " + stem.string());
  return load_model(config, world, stem);
}

std::string Run::manifest_hash(int stage) const {
  return run_key(config, dataset_hash) + "-s" + std::to_string(stage);
}

MetricReport evaluate_model(const model::Model& model, const train::Dataset& data, bool motion_heads,
                            const std::string& manifest_hash, const std::optional<std::filesystem::path>& dump_dir) {
  InferenceOptions opt;
  opt.policy.max_tracks = model.config().num_obj;
  opt.motion_heads = motion_heads;
  std::vector<EpisodeDump> dumps;
  dumps.reserve(data.episodes.size());
  if (dump_dir) std::filesystem::create_directories(*dump_dir);
  for (const auto& ep : data.episodes) {
    dumps.push_back(run_episode(model, ep, opt));
    if (dump_dir) write_dump(dumps.back(), *dump_dir / ("tracks_" + std::to_string(ep.seed) + ".jsonl"));
  }
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < dumps.size(); ++i) items.push_back({&dumps[i], &data.episodes[i]});
  return evaluate(items, model.config().multimodal_steps, model.config().dt, manifest_hash);
}

Grid grid_from(const std::string& s) {
  if (s == "queue") return Grid::kQueue;
  if (s == "horizon") return Grid::kHorizon;
  if (s == "interactions") return Grid::kInteractions;
  if (s == "velocity") return Grid::kVelocity;
  throw std::invalid_argument("unknown grid '" + s + "' (queue|horizon|interactions|velocity)");
}

const char* to_string(Grid g) {
  switch (g) {
    case Grid::kQueue: return "queue";
    case Grid::kHorizon: return "horizon";
    case Grid::kInteractions: return "interactions";
    case Grid::kVelocity: return "velocity";
  }
  return "?";
}

std::vector<AblationRow> ablation_rows(Grid grid, const train::TrainConfig& base) {
  std::vector<AblationRow> rows;
  auto divided = base;
  divided.model.architecture = model::Architecture::kDivided;
  switch (grid) {
    case Grid::kQueue:
      for (auto [q1, q2] : {std::pair{3, 3}, std::pair{5, 3}, std::pair{5, 5}}) {
        auto c = base;
        c.stage1.queue_length = static_cast<std::size_t>(q1);
        c.stage2.queue_length = static_cast<std::size_t>(q2);
        rows.push_back({"q" + std::to_string(q1) + "-q" + std::to_string(q2), c});
      }
      break;
    case Grid::kHorizon:
      for (double h : {2.0, 4.0, 6.0}) {
        auto c = divided;
        c.model.unimodal_horizon_s = h;
        rows.push_back({std::to_string(static_cast<int>(h)) + "s", c});
      }
      break;
    case Grid::kInteractions:
      for (auto [om, mm, omap, label] : {std::tuple{true, false, false, "obj-mt"},
                                         std::tuple{false, true, false, "mt-map"},
                                         std::tuple{false, false, true, "obj-map"}}) {
        auto c = divided;
        c.model.interactions = {omap, om, mm};
        rows.push_back({label, c});
      }
      break;
    case Grid::kVelocity:
      for (auto m : {model::VelocityMode::kRegressFromObj, model::VelocityMode::kBboxDifference,
                     model::VelocityMode::kRegressFromMt, model::VelocityMode::kDeriveFromUnimodal}) {
        auto c = divided;
        c.model.velocity_mode = m;
        rows.push_back({model::to_string(m), c});
      }
      break;
  }
  for (auto& r : rows) r.config.validate();
  return rows;
}

std::vector<AblationResult> run_ablation(Grid grid, const train::TrainConfig& base, const train::Dataset& train_set,
                                         const train::Dataset& eval_set, const std::filesystem::path& root) {
  std::vector<AblationResult> out;
  for (const auto& row : ablation_rows(grid, base)) {
    AblationResult r{row, {}, {}, run_dir(root, row.config, train_set.config_hash)};
    const auto trained = train::train_two_stage(row.config, train_set, r.dir);
    const std::string key = run_key(row.config, train_set.config_hash);
    r.stage1 = evaluate_model(*load_model(row.config, train_set.config, trained.stage1), eval_set, false, key + "-s1");
    r.stage2 = evaluate_model(*load_model(row.config, train_set.config, trained.stage2), eval_set, true, key + "-s2");
    std::ofstream(r.dir / "metrics_stage1.csv") << metric_csv(r.stage1);
    std::ofstream(r.dir / "metrics_stage2.csv") << metric_csv(r.stage2);
    out.push_back(std::move(r));
  }
  return out;
}

std::string ablation_csv(Grid grid, const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out << "grid,row,stage," << metric_csv_header() << '\n';
  for (const auto& r : results) {
    out << to_string(grid) << ',' << r.row.label << ",1," << metric_csv_row(r.stage1) << '\n';
    out << to_string(grid) << ',' << r.row.label << ",2," << metric_csv_row(r.stage2) << '\n';
  }
  return out.str();
}

StageScores transfer_run(const train::TrainConfig& cfg, const train::Dataset& train_set,
                         const train::Dataset& eval_set, const std::filesystem::path& dir,
                         std::size_t attribution_repeats) {
  const auto trained = train::train_two_stage(cfg, train_set, dir);
  const auto m1 = load_model(cfg, train_set.config, trained.stage1);
  const auto m2 = load_model(cfg, train_set.config, trained.stage2);
  StageScores s;
  s.map1 = evaluate_model(*m1, eval_set, false, "").detection.map.value_or(0.0);
  s.map2 = evaluate_model(*m2, eval_set, false, "").detection.map.value_or(0.0);
  const auto attr = attribution(*m1, *m2, eval_set.episodes, attribution_repeats, cfg.stage1.seed);
  s.gini1 = attr.gini1;
  s.gini2 = attr.gini2;
  return s;
}

}  // namespace dmad::eval
