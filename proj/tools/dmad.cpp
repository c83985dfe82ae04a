#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "dmad/eval/attribution.hpp"
#include "dmad/eval/pipeline.hpp"
#include "dmad/eval/report.hpp"
#include "dmad/eval/rollout.hpp"
#include "dmad/sim/serialize.hpp"
#include "dmad/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace dmad;

namespace {

struct SeedRange {
  std::uint64_t first = 0, last = 0;
};

SeedRange parse_seeds(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) {
      const auto v = std::stoull(s);
      return {v, v};
    }
    SeedRange r{std::stoull(s.substr(0, dots)), std::stoull(s.substr(dots + 2))};
    if (r.last < r.first) throw std::invalid_argument("empty range");
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("--seeds expects a..b, got '" + s + "'");
  }
}

sim::WorldConfig world_config(const std::string& path) {
  return path.empty() ? sim::WorldConfig{} : sim::read_world_config(path);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int stage_number(const std::string& s) {
  if (s == "1") return 1;
  if (s == "2") return 2;
  throw std::invalid_argument("--stage must be 1 or 2");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmad: divided motion-and-semantic decoding on a toy driving world"};
  app.require_subcommand(1);
  app.footer("Run directories live under $DMAD_RUNS_ROOT (default ./runs).");

  // gen
  std::string gen_config, gen_seeds, gen_out;
  auto* gen = app.add_subcommand("gen", "generate episodes and a dataset manifest");
  gen->add_option("--config", gen_config, "world config JSON (defaults when omitted)");
  gen->add_option("--seeds", gen_seeds, "seed range a..b")->required();
  gen->add_option("--out", gen_out, "dataset directory")->required();

  // train
  std::string train_config, train_data, train_out, train_arch, train_stage = "both";
  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "two-stage training into a run directory");
  train_cmd->add_option("--config", train_config, "training config JSON")->required();
  train_cmd->add_option("--data", train_data, "training dataset directory")->required();
  train_cmd->add_option("--arch", train_arch, "override architecture")->check(CLI::IsMember({"divided", "sequential"}));
  train_cmd->add_option("--stage", train_stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  train_cmd->add_option("--seed", train_seed, "override init and sampling seeds");
  train_cmd->add_option("--out", train_out, "run directory (default: keyed by config hash)");

  // eval
  std::string eval_run, eval_data, eval_out, eval_stage = "2";
  auto* eval_cmd = app.add_subcommand("eval", "MetricReport CSV for a trained run");
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--data", eval_data, "evaluation dataset directory")->required();
  eval_cmd->add_option("--stage", eval_stage, "checkpoint stage")->check(CLI::IsMember({"1", "2"}));
  eval_cmd->add_option("--out", eval_out, "CSV path (default: <run>/metrics_stage<s>.csv)");

  // ablate
  std::string abl_config, abl_data, abl_eval, abl_grid, abl_out;
  auto* ablate = app.add_subcommand("ablate", "sweep one ablation grid and emit a comparison CSV");
  ablate->add_option("--config", abl_config, "base training config JSON")->required();
  ablate->add_option("--grid", abl_grid, "queue|horizon|interactions|velocity")
      ->required()
      ->check(CLI::IsMember({"queue", "horizon", "interactions", "velocity"}));
  ablate->add_option("--data", abl_data, "training dataset directory")->required();
  ablate->add_option("--eval", abl_eval, "evaluation dataset directory")->required();
  ablate->add_option("--out", abl_out, "comparison CSV (default: <runs>/ablate_<grid>.csv)");

  // rollout
  std::string ro_run, ro_world, ro_out, ro_stage = "2";
  std::uint64_t ro_seed = 0, ro_count = 1;
  int ro_horizon = 20;
  auto* ro = app.add_subcommand("rollout", "closed-loop driving with a checkpoint (or the expert)");
  ro->add_option("--run", ro_run, "run directory; omitted means the expert drives");
  ro->add_option("--world", ro_world, "world config JSON when no run is given");
  ro->add_option("--stage", ro_stage, "checkpoint stage")->check(CLI::IsMember({"1", "2"}));
  ro->add_option("--seed", ro_seed, "first scene seed");
  ro->add_option("--count", ro_count, "number of scenes")->check(CLI::PositiveNumber);
  ro->add_option("--horizon", ro_horizon, "steps per scene")->check(CLI::NonNegativeNumber);
  ro->add_option("--out", ro_out, "JSON path (default: <run>/rollout.json or stdout)");

  // attribute
  std::string at_run, at_data, at_out;
  std::uint64_t at_seed = 0;
  std::size_t at_repeats = 8;
  auto* at = app.add_subcommand("attribute", "permutation attribution of stage-1 vs stage-2 checkpoints");
  at->add_option("--run", at_run, "run directory")->required();
  at->add_option("--data", at_data, "dataset directory with positive queries")->required();
  at->add_option("--seed", at_seed, "permutation seed");
  at->add_option("--repeats", at_repeats, "permutations per channel")->check(CLI::PositiveNumber);
  at->add_option("--out", at_out, "JSON path (default: <run>/attribution.json)");

  // report
  std::string rep_run, rep_out;
  auto* rep = app.add_subcommand("report", "loss CSV and SVG charts from a run's logs");
  rep->add_option("--run", rep_run, "run directory")->required();
  rep->add_option("--out", rep_out, "output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      const auto r = parse_seeds(gen_seeds);
      sim::write_dataset(world_config(gen_config), r.first, r.last, gen_out);
      std::cout << gen_out << '\n';
    } else if (*train_cmd) {
      auto cfg = train::read_train_config(train_config);
      if (!train_arch.empty()) cfg.model = model::with_architecture(cfg.model, model::architecture_from(train_arch));
      if (train_seed) cfg = train::with_seed(cfg, *train_seed);
      cfg.validate();
      const auto data = train::load_dataset(train_data);
      const fs::path dir = train_out.empty() ? eval::run_dir(eval::runs_root(), cfg, data.config_hash) : fs::path(train_out);
      if (train_stage != "2") train::run_stage(cfg, data, 1, dir);
      if (train_stage != "1") train::run_stage(cfg, data, 2, dir);
      std::cout << dir.string() << '\n';
    } else if (*eval_cmd) {
      const int stage = stage_number(eval_stage);
      const auto run = eval::open_run(eval_run);
      const auto data = train::load_dataset(eval_data);
      const auto report = eval::evaluate_model(*run.model(stage), data, stage == 2, run.manifest_hash(stage));
      const fs::path out = eval_out.empty() ? run.dir / ("metrics_stage" + eval_stage + ".csv") : fs::path(eval_out);
      write_file(out, eval::metric_csv(report));
      std::cout << out.string() << '\n';
    } else if (*ablate) {
      const auto grid = eval::grid_from(abl_grid);
      const auto base = train::read_train_config(abl_config);
      const auto train_set = train::load_dataset(abl_data);
      const auto eval_set = train::load_dataset(abl_eval);
      const auto root = eval::runs_root();
      const auto results = eval::run_ablation(grid, base, train_set, eval_set, root);
      const fs::path out = abl_out.empty() ? root / ("ablate_" + abl_grid + ".csv") : fs::path(abl_out);
      write_file(out, eval::ablation_csv(grid, results));
      std::cout << out.string() << '\n';
    } else if (*ro) {
      std::optional<eval::Run> run;
      std::unique_ptr<model::Model> m;
      sim::WorldConfig world = world_config(ro_world);
      eval::InferenceOptions opt;
      if (!ro_run.empty()) {
        run = eval::open_run(ro_run);
        world = run->world;
        m = run->model(stage_number(ro_stage));
        opt.policy.max_tracks = m->config().num_obj;
      }
      std::vector<eval::RolloutTrace> traces;
      for (std::uint64_t s = ro_seed; s < ro_seed + ro_count; ++s)
        traces.push_back(eval::rollout(m.get(), s, world, ro_horizon, opt));
      const auto summary = eval::summarize(traces);
      nlohmann::json j{{"schema", 1},
                       {"policy", m ? "model" : "expert"},
                       {"episodes", summary.episodes},
                       {"steps", summary.steps},
                       {"collision_rate", summary.collision_rate ? nlohmann::json(*summary.collision_rate) : nlohmann::json()},
                       {"mean_progress", summary.mean_progress ? nlohmann::json(*summary.mean_progress) : nlohmann::json()}};
      nlohmann::json per = nlohmann::json::array();
      for (const auto& t : traces) {
        int hits = 0;
        for (bool c : t.collisions) hits += c;
        per.push_back({{"seed", t.seed}, {"steps", t.collisions.size()}, {"collisions", hits}, {"progress", t.progress}});
      }
      j["scenes"] = per;
      if (ro_out.empty() && run) ro_out = (run->dir / "rollout.json").string();
      if (ro_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        write_file(ro_out, j.dump(2) + "\n");
        std::cout << ro_out << '\n';
      }
    } else if (*at) {
      const auto run = eval::open_run(at_run);
      const auto data = train::load_dataset(at_data);
      const auto r = eval::attribution(*run.model(1), *run.model(2), data.episodes, at_repeats, at_seed);
      const nlohmann::json j{{"schema", 1},          {"method", "permutation"}, {"stage1", r.stage1},
                             {"stage2", r.stage2},   {"gini1", r.gini1},        {"gini2", r.gini2},
                             {"difference", r.difference}};
      const fs::path out = at_out.empty() ? run.dir / "attribution.json" : fs::path(at_out);
      write_file(out, j.dump(2) + "\n");
      std::cout << out.string() << '\n';
    } else if (*rep) {
      const fs::path out = rep_out.empty() ? fs::path(rep_run) : fs::path(rep_out);
      for (const auto& p : eval::write_report(rep_run, out)) std::cout << p.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
