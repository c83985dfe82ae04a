#include "dmad/model/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace dmad::model {

using namespace dmad::ad;

namespace {

// Reference-bias log scale starts so that a token two cells away is damped
// by about e^-1.
std::vector<double> initial_log_scale(const ModelConfig& cfg) {
  const double cell = 2.0 * cfg.world_half_size / cfg.grid;
  return std::vector<double>(cfg.heads, -std::log(4.0 * cell * cell));
}

}  // namespace

std::vector<double> fourier_features(const Points& pts, double half_size, std::size_t bands) {
  std::vector<double> out;
  out.reserve(pts.size() * 4 * bands);
  for (const auto& p : pts) {
    for (std::size_t b = 0; b < bands; ++b) {
      const double f = M_PI * static_cast<double>(1u << b);
      for (int axis = 0; axis < 2; ++axis) {
        const double u = p[static_cast<std::size_t>(axis)] / half_size;
        out.push_back(std::sin(f * u));
        out.push_back(std::cos(f * u));
      }
    }
  }
  return out;
}

std::vector<Tensor> reference_bias(Tape& tape, const Points& refs, const std::vector<sim::Vec2>& centers,
                                   Parameter& log_scale, std::size_t heads) {
  std::vector<double> d2(refs.size() * centers.size());
  for (std::size_t q = 0; q < refs.size(); ++q) {
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double dx = refs[q][0] - centers[k].x;
      const double dy = refs[q][1] - centers[k].y;
      d2[q * centers.size() + k] = -(dx * dx + dy * dy);
    }
  }
  const Tensor neg = tape.constant(Shape{refs.size(), centers.size()}, std::move(d2));
  const auto scales = split(exp(tape.param(log_scale)), 1, std::vector<std::size_t>(heads, 1));
  std::vector<Tensor> out;
  out.reserve(heads);
  for (const auto& s : scales) out.push_back(mul(neg, s));
  return out;
}

TokenEncoder::TokenEncoder(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : mlp_(store, name + ".mlp", sim::SensorTokenSet::kFeatures + cfg.fourier_width(), cfg.dim, cfg.dim, rng),
      norm_(store, name + ".norm", cfg.dim),
      half_size_(cfg.world_half_size),
      bands_(cfg.fourier_bands) {}

Tensor TokenEncoder::operator()(Tape& tape, const sim::SensorTokenSet& tokens) const {
  const std::size_t n = tokens.token_count();
  const std::size_t f = sim::SensorTokenSet::kFeatures;
  Points centers(n);
  for (std::size_t k = 0; k < n; ++k) centers[k] = {tokens.centers[k].x, tokens.centers[k].y, 0.0};
  const auto pe = fourier_features(centers, half_size_, bands_);
  const std::size_t pw = 4 * bands_;
  std::vector<double> x;
  x.reserve(n * (f + pw));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < f; ++c) {
      double v = tokens.at(k, c);
      if (c == sim::SensorTokenSet::kMapSamples) v *= 0.25;
      x.push_back(v);
    }
    x.insert(x.end(), pe.begin() + static_cast<std::ptrdiff_t>(k * pw),
             pe.begin() + static_cast<std::ptrdiff_t>((k + 1) * pw));
  }
  return norm_(tape, mlp_(tape, tape.constant(Shape{n, f + pw}, std::move(x))));
}

JointAttention::JointAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                               std::size_t heads, Rng& rng)
    : attn_(store, name + ".attn", dim, heads, rng), norm_(store, name + ".norm", dim) {}

std::vector<Tensor> JointAttention::masked(Tape& tape, const std::vector<Tensor>& sets,
                                           const std::vector<std::vector<bool>>& allowed) const {
  const std::size_t n = sets.size();
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto& s : sets) {
    sizes.push_back(s.rows());
    total += s.rows();
  }
  AttentionMask mask{total, total, std::vector<std::uint8_t>(total * total, 0)};
  std::size_t r0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c0 = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || allowed[i][j])
        for (std::size_t r = r0; r < r0 + sizes[i]; ++r)
          for (std::size_t c = c0; c < c0 + sizes[j]; ++c) mask.allowed[r * total + c] = 1;
      c0 += sizes[j];
    }
    r0 += sizes[i];
  }
  const Tensor x = concat(sets, 0);
  return split(norm_(tape, add(x, attn_(tape, x, x, x, &mask))), 0, sizes);
}

std::vector<Tensor> JointAttention::operator()(Tape& tape, const std::vector<Tensor>& sets,
                                               const std::vector<std::vector<bool>>& allowed,
                                               bool force_mask) const {
  const std::size_t n = sets.size();
  if (allowed.size() != n) throw ShapeError("joint attention: flag matrix size mismatch");
  for (const auto& row : allowed)
    if (row.size() != n) throw ShapeError("joint attention: flag matrix size mismatch");
  if (force_mask) return masked(tape, sets, allowed);

  // Sets with no allowed path between them run as physically separate calls.
  std::vector<std::size_t> component(n);
  for (std::size_t i = 0; i < n; ++i) component[i] = i;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if ((allowed[i][j] || allowed[j][i]) && component[j] > component[i]) {
          component[j] = component[i];
          changed = true;
        }
  }
  std::vector<Tensor> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (component[i] == c) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() == 1) {
      const Tensor& s = sets[members[0]];
      out[members[0]] = norm_(tape, add(s, attn_(tape, s, s, s)));
      continue;
    }
    std::vector<Tensor> sub_sets;
    std::vector<std::vector<bool>> sub_allowed;
    for (auto i : members) {
      sub_sets.push_back(sets[i]);
      sub_allowed.emplace_back();
      for (auto j : members) sub_allowed.back().push_back(allowed[i][j]);
    }
    const auto parts = masked(tape, sub_sets, sub_allowed);
    for (std::size_t k = 0; k < members.size(); ++k) out[members[k]] = parts[k];
  }
  return out;
}

LocatingAttention::LocatingAttention(ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                     Rng& rng)
    : wq_(store, name + ".q", cfg.dim, cfg.dim, rng),
      wk_(store, name + ".k", cfg.dim, cfg.dim, rng),
      wv_(store, name + ".v", cfg.dim, cfg.dim, rng),
      wo_(store, name + ".o", cfg.dim, cfg.dim, rng),
      wd_(store, name + ".disp", 2 * cfg.heads, cfg.dim, rng),
      heads_(cfg.heads),
      cell_(cfg.regression_scale()) {}

Tensor LocatingAttention::operator()(Tape& tape, const Tensor& q, const Tensor& z, const Points& refs,
                                     const std::vector<sim::Vec2>& centers, const std::vector<Tensor>& bias) const {
  const std::size_t n = q.rows(), m = z.rows(), d = wq_.out_features();
  if (d % heads_ != 0) throw ShapeError("locating attention: dim not divisible by heads");
  if (refs.size() != n || centers.size() != m) throw ShapeError("locating attention: reference or center count");
  if (bias.size() != heads_) throw ShapeError("locating attention: one bias per head");
  const std::size_t dh = d / heads_;
  const std::vector<std::size_t> widths(heads_, dh);
  const auto qs = split(wq_(tape, q), 1, widths);
  const auto ks = split(wk_(tape, z), 1, widths);
  const auto vs = split(wv_(tape, z), 1, widths);
  std::vector<double> c(m * 2), r(n * 2);
  for (std::size_t k = 0; k < m; ++k) {
    c[2 * k] = centers[k].x / cell_;
    c[2 * k + 1] = centers[k].y / cell_;
  }
  for (std::size_t i = 0; i < n; ++i) {
    r[2 * i] = refs[i][0] / cell_;
    r[2 * i + 1] = refs[i][1] / cell_;
  }
  const Tensor cc = tape.constant(Shape{m, 2}, std::move(c));
  const Tensor rc = tape.constant(Shape{n, 2}, std::move(r));
  std::vector<Tensor> outs, disps;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor a = softmax(add(scale(matmul(qs[h], transpose(ks[h])), inv), bias[h]), 1);
    outs.push_back(matmul(a, vs[h]));
    disps.push_back(sub(matmul(a, cc), rc));
  }
  return add(wo_(tape, concat(outs, 1)), wd_(tape, concat(disps, 1)));
}

InteractiveLayer::InteractiveLayer(ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                   Rng& rng)
    : joint_(store, name + ".joint", cfg.dim, cfg.heads, rng),
      obj_self_(store, name + ".obj_self", cfg.dim, cfg.heads, rng),
      map_self_(store, name + ".map_self", cfg.dim, cfg.heads, rng),
      map_cross_(store, name + ".map_cross", cfg.dim, cfg.heads, rng),
      obj_cross_(store, name + ".obj_cross", cfg, rng),
      obj_norm1_(store, name + ".obj_norm1", cfg.dim),
      obj_norm2_(store, name + ".obj_norm2", cfg.dim),
      obj_norm3_(store, name + ".obj_norm3", cfg.dim),
      map_norm1_(store, name + ".map_norm1", cfg.dim),
      map_norm2_(store, name + ".map_norm2", cfg.dim),
      map_norm3_(store, name + ".map_norm3", cfg.dim),
      obj_ffn_(store, name + ".obj_ffn", cfg.dim, cfg.ffn_hidden, cfg.dim, rng),
      map_ffn_(store, name + ".map_ffn", cfg.dim, cfg.ffn_hidden, cfg.dim, rng),
      ref_scale_(&store.add(name + ".ref_scale", Shape{1, cfg.heads}, initial_log_scale(cfg))),
      heads_(cfg.heads) {}

InteractiveLayer::Output InteractiveLayer::operator()(Tape& tape, const Tensor& obj, const Tensor& map,
                                                      const Tensor& z, const Points& refs,
                                                      const std::vector<sim::Vec2>& centers,
                                                      const Interactions& flags, bool force_mask) const {
  if (flags.touches_motion())
    throw std::invalid_argument("interactive layer: motion-query interactions are wired outside the layer");
  if (obj.cols() != map.cols()) throw ShapeError("interactive layer: object and map widths differ");
  if (refs.size() != obj.rows()) throw ShapeError("interactive layer: one reference point per object query");

  const auto joint = joint_(tape, {obj, map}, {{true, flags.obj_map}, {flags.obj_map, true}}, force_mask);
  Tensor o = obj_norm1_(tape, add(joint[0], obj_self_(tape, joint[0], joint[0], joint[0])));
  const auto bias = reference_bias(tape, refs, centers, *ref_scale_, heads_);
  o = obj_norm2_(tape, add(o, obj_cross_(tape, o, z, refs, centers, bias)));
  o = obj_norm3_(tape, add(o, obj_ffn_(tape, o)));

  Tensor m = map_norm1_(tape, add(joint[1], map_self_(tape, joint[1], joint[1], joint[1])));
  m = map_norm2_(tape, add(m, map_cross_(tape, m, z, z)));
  m = map_norm3_(tape, add(m, map_ffn_(tape, m)));
  return {o, m};
}

MotionLayer::MotionLayer(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : self_(store, name + ".self", cfg.dim, cfg.heads, rng),
      cross_(store, name + ".cross", cfg.dim, cfg.heads, rng),
      norm1_(store, name + ".norm1", cfg.dim),
      norm2_(store, name + ".norm2", cfg.dim),
      norm3_(store, name + ".norm3", cfg.dim),
      ffn_(store, name + ".ffn", cfg.dim, cfg.ffn_hidden, cfg.dim, rng),
      ref_scale_(&store.add(name + ".ref_scale", Shape{1, cfg.heads}, initial_log_scale(cfg))),
      heads_(cfg.heads) {}

Tensor MotionLayer::operator()(Tape& tape, const Tensor& mt, const Tensor& z, const Points& refs,
                               const std::vector<sim::Vec2>& centers) const {
  if (refs.size() != mt.rows()) throw ShapeError("motion layer: one reference point per motion query");
  Tensor q = norm1_(tape, add(mt, self_(tape, mt, mt, mt)));
  const auto bias = reference_bias(tape, refs, centers, *ref_scale_, heads_);
  q = norm2_(tape, add(q, cross_(tape, q, z, z, nullptr, bias)));
  return norm3_(tape, add(q, ffn_(tape, q)));
}

BoxHead::BoxHead(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : mlp_(store, name, cfg.dim, cfg.dim, cfg.box_width(), rng),
      width_(cfg.box_width()),
      scale_(cfg.regression_scale()),
      velocity_(cfg.velocity_mode == VelocityMode::kRegressFromObj) {}

BoxTensors BoxHead::operator()(Tape& tape, const Tensor& obj, const Tensor& ref) const {
  const Tensor raw = mlp_(tape, obj);
  if (raw.cols() != width_) throw ShapeError("box head: unexpected output width");
  std::vector<std::size_t> sizes = {3, 3, 2, kObjectClasses};
  if (velocity_) sizes.push_back(2);
  const auto parts = split(raw, 1, sizes);
  BoxTensors out;
  out.offsets = scale(parts[0], scale_);
  out.log_size = parts[1];
  out.sincos = parts[2];
  out.logits = parts[3];
  if (velocity_) out.velocity = parts[4];
  out.centers = add(ref, out.offsets);
  return out;
}

MapHead::MapHead(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : mlp_(store, name, cfg.dim, cfg.dim, kMapClasses + 2 * sim::kPolylineVertices, rng) {}

MapTensors MapHead::operator()(Tape& tape, const Tensor& map) const {
  const auto parts = split(mlp_(tape, map), 1, {kMapClasses, 2 * sim::kPolylineVertices});
  return {parts[0], scale(parts[1], kVertexScale)};
}

UnimodalHead::UnimodalHead(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : mlp_(store, name, cfg.dim, cfg.dim, 2 * cfg.waypoints(), rng),
      scale_(cfg.regression_scale()),
      waypoints_(cfg.waypoints()) {}

Tensor UnimodalHead::operator()(Tape& tape, const Tensor& q, const Points& refs) const {
  std::vector<double> base;
  base.reserve(refs.size() * 2 * waypoints_);
  for (const auto& r : refs)
    for (std::size_t t = 0; t < waypoints_; ++t) {
      base.push_back(r[0]);
      base.push_back(r[1]);
    }
  return add(tape.constant(Shape{refs.size(), 2 * waypoints_}, std::move(base)), scale(mlp_(tape, q), scale_));
}

MultimodalHead::MultimodalHead(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : cross_(store, name + ".cross", cfg.dim, cfg.heads, rng),
      norm_(store, name + ".norm", cfg.dim),
      mlp_(store, name + ".mlp", cfg.dim, cfg.dim, cfg.modes * (2 * cfg.multimodal_steps + 1), rng),
      scale_(cfg.regression_scale()),
      ref_scale_(&store.add(name + ".ref_scale", Shape{1, cfg.heads}, initial_log_scale(cfg))),
      modes_(cfg.modes),
      steps_(cfg.multimodal_steps),
      heads_(cfg.heads) {}

MultimodalTensors MultimodalHead::operator()(Tape& tape, const Tensor& q, const Tensor& z, const Points& refs,
                                             const std::vector<sim::Vec2>& centers) const {
  const auto bias = reference_bias(tape, refs, centers, *ref_scale_, heads_);
  const Tensor h = norm_(tape, add(q, cross_(tape, q, z, z, nullptr, bias)));
  const auto parts = split(mlp_(tape, h), 1, {modes_ * 2 * steps_, modes_});
  std::vector<double> base;
  base.reserve(refs.size() * modes_ * steps_ * 2);
  for (const auto& r : refs)
    for (std::size_t k = 0; k < modes_ * steps_; ++k) {
      base.push_back(r[0]);
      base.push_back(r[1]);
    }
  const Tensor traj = add(tape.constant(Shape{refs.size(), modes_ * steps_ * 2}, std::move(base)), scale(parts[0], scale_));
  return {traj, softmax(parts[1], 1)};
}

Planner::Planner(ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
    : token_attn_(store, name + ".token_attn", cfg.dim, cfg.heads, rng),
      agent_attn_(store, name + ".agent_attn", cfg.dim, cfg.heads, rng),
      norm1_(store, name + ".norm1", cfg.dim),
      norm2_(store, name + ".norm2", cfg.dim),
      mlp_(store, name + ".mlp", cfg.dim, cfg.dim, 2 * cfg.plan_steps, rng),
      scale_(cfg.regression_scale()),
      ref_scale_(&store.add(name + ".ref_scale", Shape{1, cfg.heads}, initial_log_scale(cfg))),
      steps_(cfg.plan_steps),
      heads_(cfg.heads) {}

Tensor Planner::operator()(Tape& tape, const Tensor& ego, const Tensor& agents, const Tensor& z, sim::Vec2 ego_pos,
                           const std::vector<sim::Vec2>& centers) const {
  const Points at_ego = {{ego_pos.x, ego_pos.y, 0.0}};
  const auto bias = reference_bias(tape, at_ego, centers, *ref_scale_, heads_);
  Tensor h = norm1_(tape, add(ego, token_attn_(tape, ego, z, z, nullptr, bias)));
  h = norm2_(tape, add(h, agent_attn_(tape, h, agents, agents)));
  std::vector<double> base;
  for (std::size_t t = 0; t < steps_; ++t) {
    base.push_back(ego_pos.x);
    base.push_back(ego_pos.y);
  }
  return add(tape.constant(Shape{1, 2 * steps_}, std::move(base)), scale(mlp_(tape, h), scale_));
}

Tensor velocity_from_trajectory(const Tensor& waypoints, std::size_t past_steps, double dt) {
  if (past_steps == 0) throw std::invalid_argument("velocity: trajectory has no s_-1 waypoint");
  const std::size_t w = waypoints.cols() / 2;
  if (waypoints.cols() % 2 != 0 || w < past_steps + 2)
    throw std::invalid_argument("velocity: trajectory has no s_1 waypoint");
  const std::size_t before = 2 * (past_steps - 1);
  std::vector<std::size_t> sizes;
  if (before > 0) sizes.push_back(before);
  sizes.insert(sizes.end(), {2, 2, 2});
  const std::size_t after = waypoints.cols() - before - 6;
  if (after > 0) sizes.push_back(after);
  const auto parts = split(waypoints, 1, sizes);
  const std::size_t i = before > 0 ? 1 : 0;
  Tape& tape = waypoints.tape();
  return div(sub(parts[i + 2], parts[i]), tape.constant(Shape{1, 1}, {2.0 * dt}));
}

}  // namespace dmad::model
