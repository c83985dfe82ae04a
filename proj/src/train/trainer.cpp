#include "dmad/train/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "dmad/autodiff/adam.hpp"
#include "dmad/autodiff/checkpoint.hpp"
#include "dmad/autodiff/ops.hpp"
#include "dmad/core/hash.hpp"
#include "dmad/core/rng.hpp"
#include "dmad/sim/serialize.hpp"
#include "dmad/tracker/tracker.hpp"

namespace dmad::train {

using namespace dmad::ad;
using nlohmann::json;

std::vector<std::string> StageConfig::losses() const {
  if (stage == 1) return {"detection", "map", "unimodal"};
  return kLossFamilies;
}

void TrainConfig::set_queue_length(std::size_t q) {
  stage1.queue_length = q;
  stage2.queue_length = q;
}

const StageConfig& TrainConfig::stage(int s) const {
  if (s == 1) return stage1;
  if (s == 2) return stage2;
  throw std::invalid_argument("stage must be 1 or 2");
}

void TrainConfig::validate() const {
  model.validate();
  if (stage1.stage != 1 || stage2.stage != 2) throw std::invalid_argument("train config: stage numbering");
  for (const auto* s : {&stage1, &stage2}) {
    if (s->queue_length < 1) throw std::invalid_argument("train config: queue_length must be positive");
    if (!(s->lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  }
  if (clip_norm < 0.0) throw std::invalid_argument("train config: clip_norm must be nonnegative");
}

namespace {

json stage_json(const StageConfig& s) {
  return {{"steps", s.steps}, {"lr", s.lr}, {"seed", s.seed}, {"queue_length", s.queue_length}};
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

StageConfig stage_from(const json& j, int stage, std::size_t queue) {
  reject_unknown(j, {"steps", "lr", "seed", "queue_length"}, "stage config");
  StageConfig s;
  s.stage = stage;
  s.queue_length = queue;
  get(j, "steps", s.steps);
  get(j, "lr", s.lr);
  get(j, "seed", s.seed);
  get(j, "queue_length", s.queue_length);
  return s;
}

}  // namespace

json to_json(const TrainConfig& c) {
  json model = model::to_json(c.model);
  return {{"schema", kTrainSchema},
          {"model", model},
          {"queue_length", c.stage1.queue_length},
          {"stage1", stage_json(c.stage1)},
          {"stage2", stage_json(c.stage2)},
          {"loss_weights",
           {{"detection", c.loss.detection},
            {"map", c.loss.map},
            {"unimodal", c.loss.unimodal},
            {"multimodal", c.loss.multimodal},
            {"planning", c.loss.planning},
            {"background", c.loss.background},
            {"box_reg", c.loss.box_reg},
            {"map_reg", c.loss.map_reg},
            {"safety_radius", c.loss.safety_radius}}},
          {"match", {{"cls", c.match.cls}, {"center", c.match.center}}},
          {"clip_norm", c.clip_norm},
          {"audit_every", c.audit_every}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, {"schema", "model", "queue_length", "stage1", "stage2", "loss_weights", "match", "clip_norm",
                     "audit_every", "architecture", "interactions", "velocity_mode", "unimodal_horizon_s"},
                 "train config");
  if (!j.contains("schema") || j.at("schema").get<int>() != kTrainSchema)
    throw std::invalid_argument("train config: unsupported or missing schema version");
  TrainConfig c;
  json model = j.value("model", json::object());
  // Ablation knobs may also sit at the top level.
  for (const char* key : {"architecture", "interactions", "velocity_mode", "unimodal_horizon_s"})
    if (j.contains(key)) model[key] = j.at(key);
  c.model = model::model_config_from_json(model);
  std::size_t queue = c.stage1.queue_length;
  get(j, "queue_length", queue);
  c.stage1 = stage_from(j.value("stage1", json::object()), 1, queue);
  c.stage2 = stage_from(j.value("stage2", json::object()), 2, queue);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    reject_unknown(w, {"detection", "map", "unimodal", "multimodal", "planning", "background", "box_reg", "map_reg",
                       "safety_radius"},
                   "loss weights");
    get(w, "detection", c.loss.detection);
    get(w, "map", c.loss.map);
    get(w, "unimodal", c.loss.unimodal);
    get(w, "multimodal", c.loss.multimodal);
    get(w, "planning", c.loss.planning);
    get(w, "background", c.loss.background);
    get(w, "box_reg", c.loss.box_reg);
    get(w, "map_reg", c.loss.map_reg);
    get(w, "safety_radius", c.loss.safety_radius);
  }
  if (j.contains("match")) {
    reject_unknown(j.at("match"), {"cls", "center"}, "match weights");
    get(j.at("match"), "cls", c.match.cls);
    get(j.at("match"), "center", c.match.center);
  }
  get(j, "clip_norm", c.clip_norm);
  get(j, "audit_every", c.audit_every);
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open train config " + path.string());
  return train_config_from_json(json::parse(in));
}

std::string config_hash(const TrainConfig& c) { return fnv1a_hex(to_json(c).dump()); }

TrainConfig with_seed(TrainConfig c, std::uint64_t seed) {
  c.model.init_seed = seed;
  c.stage1.seed = seed;
  c.stage2.seed = seed + 1000;
  return c;
}

model::ModelConfig bind_world(model::ModelConfig m, const sim::WorldConfig& w) {
  m.dt = w.dt;
  m.world_half_size = w.world_half_size;
  m.grid = w.grid;
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = sim::read_manifest(dir);
  Dataset d{manifest.config, manifest.config_hash, {}};
  for (auto seed : manifest.seeds)
    d.episodes.push_back(sim::read_episode(dir / ("episode_" + std::to_string(seed) + ".json")));
  return d;
}

Dataset make_dataset(const sim::WorldConfig& config, std::uint64_t first, std::uint64_t last) {
  Dataset d{config, sim::config_hash(config), {}};
  for (std::uint64_t s = first; s <= last; ++s) d.episodes.push_back(sim::gen_episode(s, config));
  return d;
}

std::vector<std::string> stage2_only_prefixes(const model::ModelConfig& cfg) {
  std::vector<std::string> out = {"motion.multimodal.", "motion.planner."};
  if (!cfg.has_motion_decoder()) out.push_back("motion.ego_query");
  return out;
}

SampleLoss unroll_sample(Tape& tape, const model::Model& model, const sim::Episode& ep, int t0, std::size_t q,
                         bool stage2, const TrainConfig& cfg) {
  const auto& mc = model.config();
  if (t0 < 0 || t0 + static_cast<int>(q) > ep.frames())
    throw std::out_of_range("unroll_sample: window outside the observed frames");
  tracker::PropagationPolicy policy;
  policy.mode = tracker::Mode::kTraining;
  policy.max_tracks = mc.num_obj;
  tracker::TrackSet tracks;

  SampleLoss s;
  for (const auto& f : kLossFamilies) s.families[f] = tape.constant(Shape{1, 1}, {0.0});
  s.total = tape.constant(Shape{1, 1}, {0.0});
  std::optional<model::FrameOutput> prev;
  for (std::size_t i = 0; i < q; ++i) {
    const int frame = t0 + static_cast<int>(i);
    model::FrameInput in;
    in.tokens = &ep.tokens[static_cast<std::size_t>(frame)];
    in.ego_position = ep.states[static_cast<std::size_t>(frame)].ego.position;
    in.motion_heads = stage2;
    if (prev && !tracks.empty()) {
      const auto slots = tracks.slots();
      in.carried.obj = gather_rows(prev->obj, slots);
      if (mc.has_motion_decoder()) in.carried.mt = gather_rows(prev->mt, slots);
      in.carried.refs = tracks.refs();
      in.carried.ids = tracks.ids();
    }
    model::FrameOutput out = model.forward(tape, in);
    const FrameTargets targets = make_targets(ep, frame, mc);

    const auto& last = out.final();
    std::vector<std::pair<std::size_t, int>> pre;
    for (std::size_t k = 0; k < out.carried; ++k) {
      const auto* t = tracks.find(out.ids[k]);
      if (t != nullptr && t->gt_id >= 0) pre.emplace_back(k, t->gt_id);
    }
    const std::vector<double> centers(last.boxes.centers.value().begin(), last.boxes.centers.value().end());
    const MatchResult match =
        match_objects(class_probabilities(last.boxes.logits), centers, mc.num_obj, targets, pre, cfg.match);
    const std::vector<double> verts(last.map.vertices.value().begin(), last.map.vertices.value().end());
    const MatchResult map_match = match_map(class_probabilities(last.map.logits), verts, mc.num_map, targets, cfg.match);

    const LossTerms terms = compute_losses(tape, out, targets, match, map_match, mc, cfg.loss);
    s.families["detection"] = add(s.families["detection"], terms.detection);
    s.families["map"] = add(s.families["map"], terms.map);
    s.families["unimodal"] = add(s.families["unimodal"], terms.unimodal);
    if (stage2) {
      s.families["multimodal"] = add(s.families["multimodal"], terms.multimodal);
      s.families["planning"] = add(s.families["planning"], terms.planning);
    }
    s.total = add(s.total, terms.total(cfg.loss, stage2));
    s.matched += match.pairs.size();

    tracker::FrameTracks ft;
    ft.slot_ids = out.ids;
    ft.confidences = confidences(last.boxes.logits);
    ft.next_refs = out.next_references(mc.past_steps);
    ft.positives = tracker::select_positives(ft.confidences, policy, match.matched_queries());
    ft.gt_ids.assign(mc.num_obj, -1);
    for (const auto& [slot, j] : match.pairs) ft.gt_ids[slot] = targets.objects[j].id;
    tracks.update(ft, policy);
    prev = std::move(out);
  }
  const double inv = 1.0 / static_cast<double>(q);
  for (auto& [_, t] : s.families) t = scale(t, inv);
  s.total = scale(s.total, inv);
  s.frames = q;
  return s;
}

GradientAudit audit_gradients(model::Model& model, const sim::Episode& ep, int t0, std::size_t q, bool stage2,
                              const TrainConfig& cfg) {
  GradientAudit audit;
  auto& store = model.store();
  const std::vector<std::string> families =
      stage2 ? kLossFamilies : std::vector<std::string>{"detection", "map", "unimodal"};
  for (const auto& family : families) {
    store.zero_grad();
    Tape tape;
    const SampleLoss s = unroll_sample(tape, model, ep, t0, q, stage2, cfg);
    tape.backward(s.families.at(family));
    for (const auto& g : kParameterGroups) audit[family][g] = store.grad_norm(g);
  }
  store.zero_grad();
  return audit;
}

bool audit_separated(const GradientAudit& audit, const model::ModelConfig& cfg, bool stage2) {
  const std::vector<std::string> motion = stage2 ? std::vector<std::string>{"unimodal", "multimodal", "planning"}
                                                 : std::vector<std::string>{"unimodal"};
  if (cfg.has_motion_decoder()) {
    if (cfg.interactions.touches_motion()) return true;  // cross-gradients are intended
    for (const auto& f : motion)
      if (audit.at(f).at(model::kSemanticGroup) != 0.0) return false;
    for (const char* f : {"detection", "map"})
      if (audit.at(f).at(model::kMotionGroup) != 0.0) return false;
    return true;
  }
  for (const auto& f : motion)
    if (audit.at(f).at(model::kSemanticGroup) == 0.0) return false;
  return true;
}

json StepRecord::to_json() const {
  json j = {{"stage", stage}, {"step", step}, {"episode", episode}, {"t0", t0}, {"loss", loss}};
  for (const auto& [k, v] : terms) j[k] = v;
  if (audit) j["audit"] = *audit;
  return j;
}

std::vector<StepRecord> train_stage(model::Model& model, const Dataset& data, const TrainConfig& cfg, int stage,
                                    std::ostream* log) {
  const StageConfig& sc = cfg.stage(stage);
  if (data.episodes.empty()) throw std::invalid_argument("train_stage: empty dataset");
  const int frames = data.config.frames;
  if (static_cast<int>(sc.queue_length) > frames)
    throw std::invalid_argument("train_stage: queue length exceeds episode length");
  const bool stage2 = stage == 2;
  AdamConfig adam;
  adam.lr = sc.lr;
  adam.clip_norm = cfg.clip_norm;
  AdamState state;
  auto& store = model.store();
  store.zero_grad();

  std::vector<StepRecord> records;
  for (std::size_t step = 0; step < sc.steps; ++step) {
    Rng rng = Rng::derive(sc.seed, (static_cast<std::uint64_t>(stage) << 32) | step);
    const auto& ep =
        data.episodes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.episodes.size()) - 1))];
    const int t0 = static_cast<int>(rng.uniform_int(0, frames - static_cast<int>(sc.queue_length)));

    StepRecord rec;
    rec.stage = stage;
    rec.step = step;
    rec.episode = ep.seed;
    rec.t0 = t0;
    if (cfg.audit_every > 0 && step % cfg.audit_every == 0)
      rec.audit = audit_gradients(model, ep, t0, sc.queue_length, stage2, cfg);

    Tape tape;
    const SampleLoss s = unroll_sample(tape, model, ep, t0, sc.queue_length, stage2, cfg);
    rec.loss = s.total.item();
    for (const auto& f : sc.losses()) rec.terms[f] = s.families.at(f).item();
    tape.backward(s.total);
    adam_step(store, state, adam);
    store.zero_grad();
    if (log) *log << rec.to_json().dump() << '\n';
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

model::ModelConfig bound(const TrainConfig& cfg, const Dataset& data) { return bind_world(cfg.model, data.config); }

}  // namespace

std::filesystem::path run_stage(const TrainConfig& cfg, const Dataset& data, int stage,
                                const std::filesystem::path& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
  std::ofstream(dir / "dataset.json") << nlohmann::json{{"config_hash", data.config_hash},
                                                        {"world", sim::to_json(data.config)}}
                                               .dump(2)
                                         << '\n';
  model::Model model(bound(cfg, data));
  if (stage == 2) {
    const auto stem = dir / "stage1";
    if (!std::filesystem::exists(stem.string() + ".json"))
      throw std::runtime_error("stage 2 needs the stage-1 checkpoint at " + stem.string());
    load_checkpoint(model.store(), stem);
  }
  std::ofstream log(dir / "train_log.jsonl", stage == 1 ? std::ios::trunc : std::ios::app);
  train_stage(model, data, cfg, stage, &log);
  const auto out = dir / (stage == 1 ? "stage1" : "stage2");
  save_checkpoint(model.store(), out);
  return out;
}

TrainResult train_two_stage(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& dir) {
  TrainResult r;
  r.stage1 = run_stage(cfg, data, 1, dir);
  r.stage2 = run_stage(cfg, data, 2, dir);
  r.log = dir / "train_log.jsonl";
  return r;
}

}  // namespace dmad::train
