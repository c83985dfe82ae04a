#include "dmad/eval/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dmad/autodiff/ops.hpp"
#include "dmad/train/losses.hpp"

namespace dmad::eval {

using namespace dmad::ad;
using nlohmann::json;

namespace {

std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto v = t.value();
  return {v.begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

Tensor stack(Tape& tape, const std::vector<std::vector<double>>& rows, std::size_t d) {
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("carried embedding has the wrong width");
    v.insert(v.end(), r.begin(), r.end());
  }
  return tape.constant(Shape{rows.size(), d}, std::move(v));
}

}  // namespace

FrameDump FrameDecoder::decode(const sim::SensorTokenSet& tokens, Vec2 ego_position, int frame) {
  const auto& cfg = model->config();
  const bool divided = cfg.has_motion_decoder();
  Tape tape;
  model::FrameInput in;
  in.tokens = &tokens;
  in.ego_position = ego_position;
  in.motion_heads = options.motion_heads;
  if (!tracks.empty()) {
    std::vector<std::vector<double>> obj, mt;
    for (const auto& t : tracks.tracks()) {
      obj.push_back(t.obj);
      mt.push_back(t.mt);
    }
    in.carried.obj = stack(tape, obj, cfg.dim);
    if (divided) in.carried.mt = stack(tape, mt, cfg.dim);
    in.carried.refs = tracks.refs();
    in.carried.ids = tracks.ids();
  }
  const model::FrameOutput out = model->forward(tape, in);
  const auto& last = out.final();
  const auto probs = train::class_probabilities(last.boxes.logits);

  tracker::FrameTracks ft;
  ft.slot_ids = out.ids;
  ft.confidences = train::confidences(last.boxes.logits);
  ft.next_refs = out.next_references(cfg.past_steps);
  ft.positives = tracker::select_positives(ft.confidences, options.policy, std::nullopt);
  for (std::size_t s = 0; s < cfg.num_obj; ++s) {
    ft.obj.push_back(row(out.obj, s));
    ft.mt.push_back(divided ? row(out.mt, s) : std::vector<double>{});
  }
  const auto res = tracks.update(ft, options.policy);

  FrameDump dump;
  dump.frame = frame;
  std::vector<std::pair<int, Vec2>> centers_now;
  for (std::size_t s = 0; s < cfg.num_obj; ++s) {
    Detection d;
    d.slot = s;
    d.id = res.slot_ids[s];
    d.label = probs[s * model::kObjectClasses + 1] > probs[s * model::kObjectClasses] ? 1 : 0;
    d.score = ft.confidences[s];
    for (std::size_t c = 0; c < 3; ++c) {
      d.center[c] = last.boxes.centers.at(s, c);
      d.size[c] = std::exp(last.boxes.log_size.at(s, c));
    }
    d.heading = std::atan2(last.boxes.sincos.at(s, 0), last.boxes.sincos.at(s, 1));
    const Vec2 c{d.center[0], d.center[1]};
    if (cfg.velocity_mode == model::VelocityMode::kBboxDifference) {
      const auto it = std::find_if(last_centers.begin(), last_centers.end(),
                                   [&](const auto& p) { return p.first == d.id; });
      if (d.id >= 0 && it != last_centers.end()) d.velocity = (c - it->second) * (1.0 / cfg.dt);
    } else {
      d.velocity = {out.velocity.at(s, 0), out.velocity.at(s, 1)};
    }
    if (d.id >= 0) {
      centers_now.emplace_back(d.id, c);
      if (out.multimodal) {
        const auto traj = row(out.multimodal->trajectories, s);
        for (std::size_t k = 0; k < cfg.modes; ++k) {
          std::vector<Vec2> mode;
          for (std::size_t t = 0; t < cfg.multimodal_steps; ++t) {
            const std::size_t o = (k * cfg.multimodal_steps + t) * 2;
            mode.push_back({traj[o], traj[o + 1]});
          }
          d.trajectories.push_back(std::move(mode));
        }
        d.mode_confidences = row(out.multimodal->confidences, s);
      }
    }
    dump.detections.push_back(std::move(d));
  }
  last_centers = std::move(centers_now);

  const auto map_probs = train::class_probabilities(last.map.logits);
  for (std::size_t q = 0; q < cfg.num_map; ++q) {
    MapDetection m;
    const double* p = &map_probs[q * model::kMapClasses];
    const auto best = std::max_element(p, p + model::kMapBackground);
    m.label = static_cast<int>(best - p);
    m.score = *best;
    for (std::size_t v = 0; v < sim::kPolylineVertices; ++v)
      m.vertices.push_back({last.map.vertices.at(q, 2 * v), last.map.vertices.at(q, 2 * v + 1)});
    dump.map.push_back(std::move(m));
  }
  if (out.plan.valid())
    for (std::size_t k = 0; k < cfg.plan_steps; ++k) dump.plan.push_back({out.plan.at(0, 2 * k), out.plan.at(0, 2 * k + 1)});
  return dump;
}

EpisodeDump run_episode(const model::Model& model, const sim::Episode& ep, const InferenceOptions& opt) {
  if (opt.policy.mode != tracker::Mode::kInference) throw std::invalid_argument("run_episode needs inference mode");
  FrameDecoder dec{&model, opt, {}, {}};
  EpisodeDump dump;
  dump.seed = ep.seed;
  for (int f = 0; f < ep.frames(); ++f)
    dump.frames.push_back(dec.decode(ep.tokens[static_cast<std::size_t>(f)],
                                     ep.states[static_cast<std::size_t>(f)].ego.position, f));
  return dump;
}

EpisodeDump oracle_dump(const sim::Episode& ep, std::size_t future_steps, std::size_t plan_steps) {
  EpisodeDump dump;
  dump.seed = ep.seed;
  for (int f = 0; f < ep.frames(); ++f) {
    const auto& state = ep.states[static_cast<std::size_t>(f)];
    FrameDump fd;
    fd.frame = f;
    std::size_t slot = 0;
    for (const auto& o : state.objects) {
      Detection d;
      d.slot = slot++;
      d.id = o.id;
      d.label = static_cast<int>(o.category);
      d.score = 1.0;
      d.center = {o.position.x, o.position.y, 0.0};
      d.size = {o.width, o.height, o.length};
      d.heading = o.heading;
      d.velocity = o.velocity;
      std::vector<Vec2> future;
      Vec2 p = o.position;
      for (std::size_t t = 1; t <= future_steps; ++t) {
        const std::size_t g = static_cast<std::size_t>(f) + t;
        const sim::ObjectTruth* n = g < ep.states.size() ? ep.states[g].find(o.id) : nullptr;
        if (n) p = n->position;
        future.push_back(p);
      }
      d.trajectories.push_back(std::move(future));
      d.mode_confidences = {1.0};
      fd.detections.push_back(std::move(d));
    }
    for (const auto& pl : ep.map.polylines)
      fd.map.push_back({static_cast<int>(pl.category), 1.0, {pl.vertices.begin(), pl.vertices.end()}});
    fd.plan.assign(state.expert_plan.begin(),
                   state.expert_plan.begin() + static_cast<std::ptrdiff_t>(std::min(plan_steps, state.expert_plan.size())));
    dump.frames.push_back(std::move(fd));
  }
  return dump;
}

namespace {

json points(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

std::vector<Vec2> points_from(const json& j) {
  std::vector<Vec2> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace

json to_json(const FrameDump& f) {
  json dets = json::array();
  for (const auto& d : f.detections) {
    json t = json::array();
    for (const auto& m : d.trajectories) t.push_back(points(m));
    dets.push_back({{"slot", d.slot},
                    {"id", d.id},
                    {"label", d.label},
                    {"score", d.score},
                    {"center", d.center},
                    {"size", d.size},
                    {"heading", d.heading},
                    {"velocity", {d.velocity.x, d.velocity.y}},
                    {"trajectories", t},
                    {"mode_confidences", d.mode_confidences}});
  }
  json map = json::array();
  for (const auto& m : f.map) map.push_back({{"label", m.label}, {"score", m.score}, {"vertices", points(m.vertices)}});
  return {{"frame", f.frame}, {"detections", dets}, {"map", map}, {"plan", points(f.plan)}};
}

FrameDump frame_dump_from_json(const json& j) {
  FrameDump f;
  f.frame = j.at("frame");
  for (const auto& d : j.at("detections")) {
    Detection x;
    x.slot = d.at("slot");
    x.id = d.at("id");
    x.label = d.at("label");
    x.score = d.at("score");
    x.center = d.at("center").get<Point3>();
    x.size = d.at("size").get<std::array<double, 3>>();
    x.heading = d.at("heading");
    x.velocity = {d.at("velocity").at(0).get<double>(), d.at("velocity").at(1).get<double>()};
    for (const auto& m : d.at("trajectories")) x.trajectories.push_back(points_from(m));
    x.mode_confidences = d.at("mode_confidences").get<std::vector<double>>();
    f.detections.push_back(std::move(x));
  }
  for (const auto& m : j.at("map"))
    f.map.push_back({m.at("label").get<int>(), m.at("score").get<double>(), points_from(m.at("vertices"))});
  f.plan = points_from(j.at("plan"));
  return f;
}

void write_dump(const EpisodeDump& dump, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& f : dump.frames) {
    json j = to_json(f);
    j["episode"] = dump.seed;
    out << j.dump() << '\n';
  }
}

EpisodeDump read_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  EpisodeDump dump;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    dump.seed = j.at("episode");
    dump.frames.push_back(frame_dump_from_json(j));
  }
  return dump;
}

}  // namespace dmad::eval
