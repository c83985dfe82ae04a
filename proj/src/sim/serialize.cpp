#include "dmad/sim/serialize.hpp"

#include <fstream>
#include <stdexcept>

#include "dmad/core/hash.hpp"

namespace dmad::sim {

using nlohmann::json;

namespace {

json vec(Vec2 v) { return json::array({v.x, v.y}); }
Vec2 vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json vecs(const auto& pts) {
  json out = json::array();
  for (const Vec2& p : pts) out.push_back(vec(p));
  return out;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw std::invalid_argument(std::string(where) + ": unknown key '" + k + "'");
  }
}

Category category_from(const std::string& s) {
  if (s == "vehicle") return Category::kVehicle;
  if (s == "pedestrian") return Category::kPedestrian;
  throw std::invalid_argument("unknown category " + s);
}

Behavior behavior_from(const std::string& s) {
  if (s == "constant-velocity") return Behavior::kConstantVelocity;
  if (s == "constant-turn") return Behavior::kConstantTurn;
  if (s == "stop-and-go") return Behavior::kStopAndGo;
  throw std::invalid_argument("unknown behavior " + s);
}

MapCategory map_category_from(const std::string& s) {
  if (s == "lane-divider") return MapCategory::kLaneDivider;
  if (s == "crossing") return MapCategory::kCrossing;
  if (s == "boundary") return MapCategory::kBoundary;
  throw std::invalid_argument("unknown map category " + s);
}

json state_json(const WorldState& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"id", o.id},
                    {"category", to_string(o.category)},
                    {"position", vec(o.position)},
                    {"velocity", vec(o.velocity)},
                    {"size", {o.width, o.length, o.height}},
                    {"heading", o.heading},
                    {"behavior", to_string(o.behavior)},
                    {"yaw_rate", o.yaw_rate},
                    {"peak_speed", o.peak_speed},
                    {"period", o.period},
                    {"phase", o.phase},
                    {"birth_frame", o.birth_frame}});
  }
  return {{"frame", s.frame},
          {"objects", objs},
          {"ego",
           {{"position", vec(s.ego.position)},
            {"velocity", vec(s.ego.velocity)},
            {"heading", s.ego.heading},
            {"collision", s.ego.collision},
            {"action_clipped", s.ego.action_clipped}}},
          {"expert_plan", vecs(s.expert_plan)}};
}

WorldState state_from(const json& j) {
  WorldState s;
  s.frame = j.at("frame");
  for (const auto& oj : j.at("objects")) {
    ObjectTruth o;
    o.id = oj.at("id");
    o.category = category_from(oj.at("category"));
    o.position = vec(oj.at("position"));
    o.velocity = vec(oj.at("velocity"));
    o.width = oj.at("size").at(0);
    o.length = oj.at("size").at(1);
    o.height = oj.at("size").at(2);
    o.heading = oj.at("heading");
    o.behavior = behavior_from(oj.at("behavior"));
    o.yaw_rate = oj.at("yaw_rate");
    o.peak_speed = oj.at("peak_speed");
    o.period = oj.at("period");
    o.phase = oj.at("phase");
    o.birth_frame = oj.at("birth_frame");
    s.objects.push_back(o);
  }
  const json& e = j.at("ego");
  s.ego.position = vec(e.at("position"));
  s.ego.velocity = vec(e.at("velocity"));
  s.ego.heading = e.at("heading");
  s.ego.collision = e.at("collision");
  s.ego.action_clipped = e.at("action_clipped");
  for (const auto& p : j.at("expert_plan")) s.expert_plan.push_back(vec(p));
  return s;
}

json tokens_json(const SensorTokenSet& t) {
  return {{"grid", t.grid}, {"cell_size", t.cell_size}, {"features", t.features}};
}

SensorTokenSet tokens_from(const json& j, double half_size) {
  SensorTokenSet t;
  t.grid = j.at("grid");
  t.cell_size = j.at("cell_size");
  t.features = j.at("features").get<std::vector<double>>();
  for (int cy = 0; cy < t.grid; ++cy)
    for (int cx = 0; cx < t.grid; ++cx)
      t.centers.push_back({-half_size + (cx + 0.5) * t.cell_size, -half_size + (cy + 0.5) * t.cell_size});
  return t;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
}

}  // namespace

json to_json(const WorldConfig& c) {
  return {{"world_half_size", c.world_half_size},
          {"frames", c.frames},
          {"future_frames", c.future_frames},
          {"dt", c.dt},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"map_polylines", c.map_polylines},
          {"birth_prob", c.birth_prob},
          {"grid", c.grid},
          {"plan_steps", c.plan_steps},
          {"cruise_speed_min", c.cruise_speed_min},
          {"cruise_speed_max", c.cruise_speed_max},
          {"noise",
           {{"position_sigma", c.noise.position_sigma},
            {"miss_prob", c.noise.miss_prob},
            {"clutter_rate", c.noise.clutter_rate}}},
          {"ego",
           {{"max_speed", c.ego.max_speed},
            {"max_accel", c.ego.max_accel},
            {"max_brake", c.ego.max_brake},
            {"comfort_brake", c.ego.comfort_brake},
            {"max_yaw_rate", c.ego.max_yaw_rate}}}};
}

WorldConfig world_config_from_json(const json& j) {
  reject_unknown(j,
                 {"world_half_size", "frames", "future_frames", "dt", "min_objects", "max_objects",
                  "map_polylines", "birth_prob", "grid", "plan_steps", "cruise_speed_min",
                  "cruise_speed_max", "noise", "ego"},
                 "world config");
  WorldConfig c;
  read_field(j, "world_half_size", c.world_half_size);
  read_field(j, "frames", c.frames);
  read_field(j, "future_frames", c.future_frames);
  read_field(j, "dt", c.dt);
  read_field(j, "min_objects", c.min_objects);
  read_field(j, "max_objects", c.max_objects);
  read_field(j, "map_polylines", c.map_polylines);
  read_field(j, "birth_prob", c.birth_prob);
  read_field(j, "grid", c.grid);
  read_field(j, "plan_steps", c.plan_steps);
  read_field(j, "cruise_speed_min", c.cruise_speed_min);
  read_field(j, "cruise_speed_max", c.cruise_speed_max);
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    reject_unknown(n, {"position_sigma", "miss_prob", "clutter_rate"}, "noise config");
    read_field(n, "position_sigma", c.noise.position_sigma);
    read_field(n, "miss_prob", c.noise.miss_prob);
    read_field(n, "clutter_rate", c.noise.clutter_rate);
  }
  if (j.contains("ego")) {
    const json& e = j.at("ego");
    reject_unknown(e, {"max_speed", "max_accel", "max_brake", "comfort_brake", "max_yaw_rate"}, "ego config");
    read_field(e, "max_speed", c.ego.max_speed);
    read_field(e, "max_accel", c.ego.max_accel);
    read_field(e, "max_brake", c.ego.max_brake);
    read_field(e, "comfort_brake", c.ego.comfort_brake);
    read_field(e, "max_yaw_rate", c.ego.max_yaw_rate);
  }
  c.validate();
  return c;
}

WorldConfig read_world_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return world_config_from_json(json::parse(in));
}

std::string config_hash(const WorldConfig& config) { return fnv1a_hex(to_json(config).dump()); }

json to_json(const Episode& ep) {
  json polylines = json::array();
  for (const auto& p : ep.map.polylines)
    polylines.push_back({{"category", to_string(p.category)}, {"vertices", vecs(p.vertices)}});
  json lanes = json::array();
  for (const auto& l : ep.map.lanes) lanes.push_back(vecs(l.centerline));
  json states = json::array();
  for (const auto& s : ep.states) states.push_back(state_json(s));
  json tokens = json::array();
  for (const auto& t : ep.tokens) tokens.push_back(tokens_json(t));
  return {{"schema", kEpisodeSchema},
          {"seed", ep.seed},
          {"config", to_json(ep.config)},
          {"config_hash", config_hash(ep.config)},
          {"cruise_speed", ep.cruise_speed},
          {"map",
           {{"polylines", polylines},
            {"lanes", lanes},
            {"ego_lane", ep.map.ego_lane},
            {"lane_width", ep.map.lane_width}}},
          {"states", states},
          {"tokens", tokens}};
}

Episode episode_from_json(const json& j) {
  if (j.at("schema").get<int>() != kEpisodeSchema)
    throw std::runtime_error("episode schema " + j.at("schema").dump() + " is not supported");
  Episode ep;
  ep.seed = j.at("seed");
  ep.config = world_config_from_json(j.at("config"));
  ep.cruise_speed = j.at("cruise_speed");
  const json& m = j.at("map");
  for (const auto& pj : m.at("polylines")) {
    MapPolyline p;
    p.category = map_category_from(pj.at("category"));
    const json& v = pj.at("vertices");
    if (v.size() != kPolylineVertices) throw std::runtime_error("polyline vertex count mismatch");
    for (std::size_t i = 0; i < kPolylineVertices; ++i) p.vertices[i] = vec(v.at(i));
    ep.map.polylines.push_back(p);
  }
  for (const auto& lj : m.at("lanes")) {
    Lane l;
    for (const auto& p : lj) l.centerline.push_back(vec(p));
    ep.map.lanes.push_back(std::move(l));
  }
  ep.map.ego_lane = m.at("ego_lane");
  ep.map.lane_width = m.at("lane_width");
  for (const auto& s : j.at("states")) ep.states.push_back(state_from(s));
  for (const auto& t : j.at("tokens")) ep.tokens.push_back(tokens_from(t, ep.config.world_half_size));
  return ep;
}

void write_episode(const Episode& episode, const std::filesystem::path& path) {
  write_json(to_json(episode), path);
}

Episode read_episode(const std::filesystem::path& path) { return episode_from_json(read_json(path)); }

void write_dataset(const WorldConfig& config, std::uint64_t first, std::uint64_t last,
                   const std::filesystem::path& dir) {
  if (last < first) throw std::invalid_argument("seed range is empty");
  std::filesystem::create_directories(dir);
  json seeds = json::array();
  for (std::uint64_t s = first; s <= last; ++s) {
    write_episode(gen_episode(s, config), dir / ("episode_" + std::to_string(s) + ".json"));
    seeds.push_back(s);
  }
  write_json({{"schema", kEpisodeSchema},
              {"config_hash", config_hash(config)},
              {"config", to_json(config)},
              {"seeds", seeds}},
             dir / "manifest.json");
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const json j = read_json(dir / "manifest.json");
  DatasetManifest m;
  m.config_hash = j.at("config_hash");
  m.config = world_config_from_json(j.at("config"));
  m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (config_hash(m.config) != m.config_hash) throw std::runtime_error("manifest config hash mismatch");
  return m;
}

}  // namespace dmad::sim
