#include "dmad/model/model.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace dmad::model {

using namespace dmad::ad;

namespace {

Points rows_of(const Tensor& t) {
  Points out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < 3; ++c) out[r][c] = t.at(r, c);
  return out;
}

Tensor points_constant(Tape& tape, const Points& pts) {
  std::vector<double> v;
  v.reserve(pts.size() * 3);
  for (const auto& p : pts) v.insert(v.end(), p.begin(), p.end());
  return tape.constant(Shape{pts.size(), 3}, std::move(v));
}

std::vector<double> uniform_init(std::size_t n, double lo, double hi, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

Points FrameOutput::next_references(std::size_t past_steps) const {
  const Tensor& u = final().unimodal;
  Points out(u.rows());
  const std::size_t c = 2 * (past_steps + 1);
  for (std::size_t r = 0; r < u.rows(); ++r) out[r] = {u.at(r, c), u.at(r, c + 1), 0.0};
  return out;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  const std::size_t d = cfg_.dim;
  const double R = cfg_.world_half_size;
  const double query_scale = 1.0;

  encoder_ = TokenEncoder(store_, "encoder", cfg_, rng);

  obj_query_ = &store_.add("semantic.obj_query", Shape{cfg_.num_obj, d},
                           uniform_init(cfg_.num_obj * d, -query_scale, query_scale, rng));
  std::vector<double> refs;
  for (std::size_t i = 0; i < cfg_.num_obj; ++i) {
    refs.push_back(rng.uniform(-R, R));
    refs.push_back(rng.uniform(-R, R));
    refs.push_back(0.0);
  }
  ref_init_ = &store_.add("semantic.ref_init", Shape{cfg_.num_obj, 3}, refs);
  map_query_ = &store_.add("semantic.map_query", Shape{cfg_.num_map, d},
                           uniform_init(cfg_.num_map * d, -query_scale, query_scale, rng));
  map_pos_ = &store_.add("semantic.map_pos", Shape{cfg_.num_map, d},
                         uniform_init(cfg_.num_map * d, -query_scale, query_scale, rng));
  obj_pe_ = Linear(store_, "semantic.pe", cfg_.fourier_width(), d, rng);
  obj_propagate_ = LayerNorm(store_, "semantic.propagate", d);
  for (std::size_t l = 0; l < cfg_.layers; ++l)
    semantic_.emplace_back(store_, "semantic.layer" + std::to_string(l), cfg_, rng);
  box_head_ = BoxHead(store_, "semantic.box_head", cfg_, rng);
  map_head_ = MapHead(store_, "semantic.map_head", cfg_, rng);

  if (cfg_.has_motion_decoder()) {
    mt_query_ = &store_.add("motion.mt_query", Shape{cfg_.num_obj, d},
                            uniform_init(cfg_.num_obj * d, -query_scale, query_scale, rng));
    mt_pe_ = Linear(store_, "motion.pe", cfg_.fourier_width(), d, rng);
    mt_propagate_ = LayerNorm(store_, "motion.propagate", d);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      motion_.emplace_back(store_, "motion.layer" + std::to_string(l), cfg_, rng);
  }
  // The ego query starts random and is shared by both wirings.
  ego_query_ = &store_.add("motion.ego_query", Shape{1, d}, uniform_init(d, -query_scale, query_scale, rng));
  if (cfg_.interactions.touches_motion()) {
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      interaction_.emplace_back(store_, "interaction.layer" + std::to_string(l), d, cfg_.heads, rng);
  }
  unimodal_ = UnimodalHead(store_, "motion.unimodal", cfg_, rng);
  if (cfg_.velocity_mode == VelocityMode::kRegressFromMt)
    velocity_head_.emplace(store_, "motion.velocity_head", d, d, 2, rng);
  multimodal_ = MultimodalHead(store_, "motion.multimodal", cfg_, rng);
  planner_ = Planner(store_, "motion.planner", cfg_, rng);
}

Points Model::initial_references() const {
  Points out(cfg_.num_obj);
  const auto v = ref_init_->value();
  for (std::size_t i = 0; i < cfg_.num_obj; ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

std::vector<std::size_t> Model::fresh_queries(const Points& carried) const {
  if (carried.size() > cfg_.num_obj)
    throw std::invalid_argument("more carried tracks than object query slots");
  const Points init = initial_references();
  std::vector<std::size_t> remaining(cfg_.num_obj);
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
  for (const auto& c : carried) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < remaining.size(); ++j) {
      const auto& p = init[remaining[j]];
      const double d = (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return remaining;
}

FrameOutput Model::forward(Tape& tape, const FrameInput& in) const {
  if (in.tokens == nullptr) throw std::invalid_argument("forward: no sensor tokens");
  const CarriedQueries& carried = in.carried;
  const std::size_t k = carried.size();
  if (carried.refs.size() != k) throw ShapeError("forward: carried references and ids differ in length");
  const bool divided = cfg_.has_motion_decoder();
  const double clip = ref_clip();
  const auto& centers = in.tokens->centers;

  FrameOutput out;
  out.ids = carried.ids;
  out.carried = k;
  out.fresh_queries = fresh_queries(carried.refs);
  out.ids.resize(cfg_.num_obj, -1);
  out.z = encoder_(tape, *in.tokens);
  const Tensor& z = out.z;

  // Slot layout: carried tracks first, then fresh learned queries.
  const Tensor fresh_obj = gather_rows(tape.param(*obj_query_), out.fresh_queries);
  const Tensor fresh_ref = gather_rows(tape.param(*ref_init_), out.fresh_queries);
  Tensor obj = fresh_obj;
  Tensor ref = fresh_ref;
  Points ref_in = carried.refs;
  {
    const Points init = initial_references();
    for (auto i : out.fresh_queries) ref_in.push_back(init[i]);
  }
  if (k > 0) {
    obj = concat({propagate_obj(tape, carried.obj), fresh_obj}, 0);
    ref = concat({points_constant(tape, carried.refs), fresh_ref}, 0);
  }

  Tensor agents, ego;
  if (divided) {
    agents = gather_rows(tape.param(*mt_query_), out.fresh_queries);
    if (k > 0) agents = concat({propagate_mt(tape, carried.mt), agents}, 0);
    ego = tape.param(*ego_query_);
  }
  Tensor map = tape.param(*map_query_);
  const Tensor map_pos = tape.param(*map_pos_);
  const Points ego_ref = {{in.ego_position.x, in.ego_position.y, 0.0}};
  const Interactions semantic_flags{cfg_.interactions.obj_map, false, false};

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    LayerOutput lo;
    lo.ref_in = ref_in;
    const Tensor obj_pe = obj_pe_(tape, tape.constant(Shape{ref_in.size(), cfg_.fourier_width()},
                                                      fourier_features(ref_in, cfg_.world_half_size,
                                                                       cfg_.fourier_bands)));
    auto sem = semantic_[l](tape, add(obj, obj_pe), add(map, map_pos), z, ref_in, centers, semantic_flags,
                            in.force_mask);
    obj = sem.obj;
    map = sem.map;
    if (!interaction_.empty()) {
      const bool om = cfg_.interactions.obj_mt, mm = cfg_.interactions.mt_map;
      const Tensor mt_all = concat({agents, ego}, 0);
      auto mixed = interaction_[l](tape, {obj, map, mt_all}, {{true, false, om}, {false, true, mm}, {om, mm, true}},
                                   in.force_mask);
      obj = mixed[0];
      map = mixed[1];
      const auto parts = split(mixed[2], 0, {agents.rows(), 1});
      agents = parts[0];
      ego = parts[1];
    }
    lo.boxes = box_head_(tape, obj, ref);
    lo.map = map_head_(tape, map);
    out.schedule.push_back("measure:" + std::to_string(l));

    Points exported = rows_of(lo.boxes.centers);
    for (auto& p : exported)
      for (double& c : p) c = std::clamp(c, -clip, clip);
    lo.ref_export = exported;

    if (divided) {
      lo.motion_refs = exported;
      lo.motion_refs.push_back(ego_ref[0]);
      const Tensor mt_pe = mt_pe_(tape, tape.constant(Shape{lo.motion_refs.size(), cfg_.fourier_width()},
                                                      fourier_features(lo.motion_refs, cfg_.world_half_size,
                                                                       cfg_.fourier_bands)));
      const Tensor mt = motion_[l](tape, add(concat({agents, ego}, 0), mt_pe), z, lo.motion_refs, centers);
      const auto parts = split(mt, 0, {agents.rows(), 1});
      agents = parts[0];
      ego = parts[1];
      out.schedule.push_back("update:" + std::to_string(l));
      lo.unimodal = unimodal_(tape, agents, exported);
    } else {
      lo.unimodal = unimodal_(tape, obj, exported);
    }
    ref_in = exported;
    ref = points_constant(tape, exported);
    out.layers.push_back(std::move(lo));
  }
  out.schedule.push_back("predict");

  out.obj = obj;
  const LayerOutput& last = out.layers.back();
  const Tensor& motion_source = divided ? agents : obj;
  if (divided) out.mt = agents;
  switch (cfg_.velocity_mode) {
    case VelocityMode::kDeriveFromUnimodal:
      out.velocity = velocity_from_trajectory(last.unimodal, cfg_.past_steps, cfg_.dt);
      break;
    case VelocityMode::kRegressFromObj: out.velocity = last.boxes.velocity; break;
    case VelocityMode::kRegressFromMt: out.velocity = (*velocity_head_)(tape, agents); break;
    case VelocityMode::kBboxDifference: break;
  }
  if (in.motion_heads) {
    out.multimodal = multimodal_(tape, motion_source, z, last.ref_export, centers);
    const Tensor ego_q = divided ? ego : tape.param(*ego_query_);
    out.plan = planner_(tape, ego_q, motion_source, z, in.ego_position, centers);
  }
  return out;
}

}  // namespace dmad::model
