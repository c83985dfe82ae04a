#include "dmad/train/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dmad/train/hungarian.hpp"

namespace dmad::train {

using namespace dmad::ad;

FrameTargets make_targets(const sim::Episode& ep, int frame, const model::ModelConfig& cfg) {
  if (frame < 0 || static_cast<std::size_t>(frame) >= ep.states.size())
    throw std::out_of_range("make_targets: frame outside the episode");
  const auto& state = ep.states[static_cast<std::size_t>(frame)];
  FrameTargets t;
  t.frame = frame;
  const int past = static_cast<int>(cfg.past_steps);
  const int fut = static_cast<int>(cfg.future_steps());
  auto lookup = [&](int id, int f) -> const sim::ObjectTruth* {
    if (f < 0 || static_cast<std::size_t>(f) >= ep.states.size()) return nullptr;
    return ep.states[static_cast<std::size_t>(f)].find(id);
  };
  for (const auto& o : state.objects) {
    ObjectTarget ot;
    ot.id = o.id;
    ot.category = static_cast<std::size_t>(o.category);
    ot.center = {o.position.x, o.position.y, 0.0};
    ot.size = {o.width, o.height, o.length};
    ot.heading = o.heading;
    ot.velocity = o.velocity;
    t.objects.push_back(ot);

    std::vector<double> uni, uni_mask;
    for (int s = -past; s <= fut; ++s) {
      const auto* p = lookup(o.id, frame + s);
      uni.push_back(p ? p->position.x : 0.0);
      uni.push_back(p ? p->position.y : 0.0);
      uni_mask.insert(uni_mask.end(), 2, p ? 1.0 : 0.0);
    }
    t.unimodal.push_back(std::move(uni));
    t.unimodal_mask.push_back(std::move(uni_mask));

    std::vector<double> fut_pos, fut_mask;
    for (std::size_t s = 1; s <= cfg.multimodal_steps; ++s) {
      const auto* p = lookup(o.id, frame + static_cast<int>(s));
      fut_pos.push_back(p ? p->position.x : 0.0);
      fut_pos.push_back(p ? p->position.y : 0.0);
      fut_mask.insert(fut_mask.end(), 2, p ? 1.0 : 0.0);
    }
    t.future.push_back(std::move(fut_pos));
    t.future_mask.push_back(std::move(fut_mask));
  }
  for (const auto& pl : ep.map.polylines) {
    MapTarget mt;
    mt.category = static_cast<std::size_t>(pl.category);
    for (std::size_t v = 0; v < sim::kPolylineVertices; ++v) {
      mt.vertices[2 * v] = pl.vertices[v].x;
      mt.vertices[2 * v + 1] = pl.vertices[v].y;
    }
    t.map.push_back(mt);
  }
  t.ego_position = state.ego.position;
  t.expert_plan = state.expert_plan;
  for (std::size_t k = 1; k <= t.expert_plan.size(); ++k) {
    std::vector<sim::OrientedBox> boxes;
    const std::size_t f = static_cast<std::size_t>(frame) + k;
    if (f < ep.states.size())
      for (const auto& o : ep.states[f].objects) boxes.push_back(o.box());
    t.plan_step_boxes.push_back(std::move(boxes));
  }
  return t;
}

std::vector<std::size_t> MatchResult::matched_queries() const {
  std::vector<std::size_t> out;
  for (const auto& [q, _] : pairs) out.push_back(q);
  return out;
}

namespace {

MatchResult finish(std::vector<std::pair<std::size_t, std::size_t>> pairs, double cost, std::size_t nq,
                   std::size_t nt) {
  MatchResult r;
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> q_used(nq, false), t_used(nt, false);
  for (const auto& [q, t] : pairs) {
    q_used[q] = true;
    t_used[t] = true;
  }
  for (std::size_t q = 0; q < nq; ++q)
    if (!q_used[q]) r.unmatched_queries.push_back(q);
  for (std::size_t t = 0; t < nt; ++t)
    if (!t_used[t]) r.unmatched_targets.push_back(t);
  r.pairs = std::move(pairs);
  r.cost = cost;
  return r;
}

}  // namespace

MatchResult match_objects(const std::vector<double>& probs, const std::vector<double>& centers,
                          std::size_t nq, const FrameTargets& targets,
                          const std::vector<std::pair<std::size_t, int>>& pre_assigned,
                          const MatchWeights& w) {
  const std::size_t nt = targets.objects.size();
  auto pair_cost = [&](std::size_t q, std::size_t t) {
    const auto& o = targets.objects[t];
    double l1 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) l1 += std::abs(centers[q * 3 + c] - o.center[c]);
    return w.cls * (1.0 - probs[q * model::kObjectClasses + o.category]) + w.center * l1;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double cost = 0.0;
  std::vector<bool> q_fixed(nq, false), t_fixed(nt, false);
  for (const auto& [slot, id] : pre_assigned) {
    for (std::size_t t = 0; t < nt; ++t) {
      if (targets.objects[t].id != id || t_fixed[t] || q_fixed[slot]) continue;
      pairs.emplace_back(slot, t);
      cost += pair_cost(slot, t);
      q_fixed[slot] = true;
      t_fixed[t] = true;
    }
  }
  std::vector<std::size_t> qs, ts;
  for (std::size_t q = 0; q < nq; ++q)
    if (!q_fixed[q]) qs.push_back(q);
  for (std::size_t t = 0; t < nt; ++t)
    if (!t_fixed[t]) ts.push_back(t);
  std::vector<double> c(qs.size() * ts.size());
  for (std::size_t i = 0; i < qs.size(); ++i)
    for (std::size_t j = 0; j < ts.size(); ++j) c[i * ts.size() + j] = pair_cost(qs[i], ts[j]);
  const auto a = hungarian(c, qs.size(), ts.size());
  for (const auto& [i, j] : a.pairs) pairs.emplace_back(qs[i], ts[j]);
  return finish(std::move(pairs), cost + a.cost, nq, nt);
}

double polyline_l1(const double* pred, const MapTarget& gt, bool* flipped) {
  constexpr std::size_t nv = sim::kPolylineVertices;
  double fwd = 0.0, rev = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    const std::size_t r = nv - 1 - v;
    fwd += std::abs(pred[2 * v] - gt.vertices[2 * v]) + std::abs(pred[2 * v + 1] - gt.vertices[2 * v + 1]);
    rev += std::abs(pred[2 * v] - gt.vertices[2 * r]) + std::abs(pred[2 * v + 1] - gt.vertices[2 * r + 1]);
  }
  if (flipped) *flipped = rev < fwd;
  return std::min(fwd, rev) / static_cast<double>(nv);
}

MatchResult match_map(const std::vector<double>& probs, const std::vector<double>& vertices, std::size_t nq,
                      const FrameTargets& targets, const MatchWeights& w) {
  const std::size_t nt = targets.map.size();
  const std::size_t width = 2 * sim::kPolylineVertices;
  std::vector<double> c(nq * nt);
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t t = 0; t < nt; ++t)
      c[q * nt + t] = w.cls * (1.0 - probs[q * model::kMapClasses + targets.map[t].category]) +
                      w.center * polyline_l1(&vertices[q * width], targets.map[t]);
  const auto a = hungarian(c, nq, nt);
  return finish(a.pairs, a.cost, nq, nt);
}

std::vector<double> class_probabilities(const Tensor& logits) {
  std::vector<double> out(logits.size());
  const std::size_t k = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += out[r * k + c] = std::exp(logits.at(r, c) - mx);
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= sum;
  }
  return out;
}

std::vector<double> confidences(const Tensor& logits) {
  const auto p = class_probabilities(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r)
    out[r] = std::max(p[r * model::kObjectClasses + 0], p[r * model::kObjectClasses + 1]);
  return out;
}

Tensor weighted_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<std::size_t>& labels,
                              const std::vector<double>& weights) {
  const std::size_t n = logits.rows(), k = logits.cols();
  std::vector<double> w(n * k, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    w[r * k + labels[r]] = -weights[r];
    total += weights[r];
  }
  if (total <= 0.0) return tape.constant(Shape{1, 1}, {0.0});
  return scale(sum_all(mul(log_softmax(logits), tape.constant(Shape{n, k}, std::move(w)))), 1.0 / total);
}

namespace {

Tensor zero(Tape& tape) { return tape.constant(Shape{1, 1}, {0.0}); }

Tensor rows_constant(Tape& tape, const std::vector<std::vector<double>>& rows) {
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return tape.constant(Shape{rows.size(), rows.empty() ? 0 : rows[0].size()}, std::move(v));
}

Tensor detection_layer(Tape& tape, const model::BoxTensors& b, const FrameTargets& t, const MatchResult& m,
                       const LossWeights& w) {
  const std::size_t n = b.logits.rows();
  std::vector<std::size_t> labels(n, model::kBackground);
  std::vector<double> cw(n, w.background);
  for (const auto& [q, j] : m.pairs) {
    labels[q] = t.objects[j].category;
    cw[q] = 1.0;
  }
  Tensor loss = weighted_cross_entropy(tape, b.logits, labels, cw);
  if (m.pairs.empty()) return loss;

  const auto slots = m.matched_queries();
  std::vector<std::vector<double>> center, size, sc, vel;
  for (const auto& [q, j] : m.pairs) {
    const auto& o = t.objects[j];
    center.push_back({o.center[0], o.center[1], o.center[2]});
    size.push_back({o.size[0], o.size[1], o.size[2]});
    sc.push_back({std::sin(o.heading), std::cos(o.heading)});
    vel.push_back({o.velocity.x, o.velocity.y});
  }
  Tensor reg = add(sum_all(abs(sub(gather_rows(b.centers, slots), rows_constant(tape, center)))),
                   sum_all(abs(sub(exp(gather_rows(b.log_size, slots)), rows_constant(tape, size)))));
  reg = add(reg, sum_all(abs(sub(gather_rows(b.sincos, slots), rows_constant(tape, sc)))));
  if (b.velocity.valid()) reg = add(reg, sum_all(abs(sub(gather_rows(b.velocity, slots), rows_constant(tape, vel)))));
  return add(loss, scale(reg, w.box_reg / static_cast<double>(slots.size())));
}

Tensor map_layer(Tape& tape, const model::MapTensors& mp, const FrameTargets& t, const MatchResult& m,
                 const LossWeights& w) {
  const std::size_t n = mp.logits.rows();
  std::vector<std::size_t> labels(n, model::kMapBackground);
  std::vector<double> cw(n, w.background);
  for (const auto& [q, j] : m.pairs) {
    labels[q] = t.map[j].category;
    cw[q] = 1.0;
  }
  Tensor loss = weighted_cross_entropy(tape, mp.logits, labels, cw);
  if (m.pairs.empty()) return loss;
  constexpr std::size_t nv = sim::kPolylineVertices;
  const auto slots = m.matched_queries();
  const auto values = mp.vertices.value();
  std::vector<std::vector<double>> target;
  for (const auto& [q, j] : m.pairs) {
    bool flipped = false;
    polyline_l1(&values[q * 2 * nv], t.map[j], &flipped);
    std::vector<double> row(2 * nv);
    for (std::size_t v = 0; v < nv; ++v) {
      const std::size_t src = flipped ? nv - 1 - v : v;
      row[2 * v] = t.map[j].vertices[2 * src];
      row[2 * v + 1] = t.map[j].vertices[2 * src + 1];
    }
    target.push_back(std::move(row));
  }
  const Tensor reg = sum_all(abs(sub(gather_rows(mp.vertices, slots), rows_constant(tape, target))));
  return add(loss, scale(reg, w.map_reg / static_cast<double>(slots.size() * nv)));
}

// Masked mean L1 over the matched slots; zero when nothing is valid.
Tensor masked_l1(Tape& tape, const Tensor& pred, const std::vector<std::size_t>& slots,
                 const std::vector<std::vector<double>>& target, const std::vector<std::vector<double>>& mask) {
  double valid = 0.0;
  for (const auto& m : mask)
    for (double x : m) valid += x;
  if (slots.empty() || valid == 0.0) return zero(tape);
  const Tensor diff = mul(abs(sub(gather_rows(pred, slots), rows_constant(tape, target))), rows_constant(tape, mask));
  return scale(sum_all(diff), 1.0 / valid);
}

}  // namespace

Tensor multimodal_loss(Tape& tape, const Tensor& traj_row, const Tensor& conf_row, const std::vector<double>& target,
                       const std::vector<double>& mask, std::size_t modes, std::size_t* best_out) {
  const std::size_t width = target.size();
  if (traj_row.size() != modes * width) throw ShapeError("multimodal loss: trajectory width mismatch");
  double valid = 0.0;
  for (double m : mask) valid += m;
  if (valid == 0.0) return zero(tape);
  const Tensor per_mode = reshape(traj_row, Shape{modes, width});
  const Tensor err = mul(abs(sub(per_mode, tape.constant(Shape{1, width}, target))), tape.constant(Shape{1, width}, mask));
  const Tensor mode_l1 = scale(sum(err, 1), 1.0 / valid);  // modes x 1
  std::size_t best = 0;
  for (std::size_t k = 1; k < modes; ++k)
    if (mode_l1.at(k, 0) < mode_l1.at(best, 0)) best = k;
  if (best_out) *best_out = best;
  const Tensor conf = gather_rows(transpose(conf_row), {best});
  return sub(gather_rows(mode_l1, {best}), log(conf));
}

Tensor planning_loss(Tape& tape, const Tensor& plan, const std::vector<sim::Vec2>& expert,
                     const std::vector<std::vector<sim::OrientedBox>>& boxes, double safety_radius) {
  const std::size_t steps = plan.cols() / 2;
  if (expert.size() < steps) throw std::invalid_argument("planning loss: expert plan shorter than the prediction");
  std::vector<double> target;
  for (std::size_t k = 0; k < steps; ++k) {
    target.push_back(expert[k].x);
    target.push_back(expert[k].y);
  }
  Tensor loss = scale(sum_all(abs(sub(plan, tape.constant(Shape{1, 2 * steps}, target)))), 1.0 / (2.0 * steps));
  const auto pts = split(plan, 1, std::vector<std::size_t>(steps, 2));
  Tensor hinge = zero(tape);
  bool any = false;
  for (std::size_t k = 0; k < steps && k < boxes.size(); ++k) {
    const sim::Vec2 p{plan.at(0, 2 * k), plan.at(0, 2 * k + 1)};
    for (const auto& b : boxes[k]) {
      const sim::Vec2 c = sim::closest_point_on_box(p, b);
      if ((p - c).norm() >= safety_radius) continue;
      const Tensor d2 = sum_all(square(sub(pts[k], tape.constant(Shape{1, 2}, {c.x, c.y}))));
      const Tensor dist = sqrt(add_scalar(d2, 1e-9));
      hinge = add(hinge, relu(add_scalar(scale(dist, -1.0), safety_radius)));
      any = true;
    }
  }
  if (any) loss = add(loss, scale(hinge, 1.0 / static_cast<double>(steps)));
  return loss;
}

LossTerms compute_losses(Tape& tape, const model::FrameOutput& out, const FrameTargets& t,
                         const MatchResult& objects, const MatchResult& map, const model::ModelConfig& cfg,
                         const LossWeights& w) {
  LossTerms terms;
  const double inv_layers = 1.0 / static_cast<double>(out.layers.size());
  const auto slots = objects.matched_queries();
  std::vector<std::vector<double>> uni_t, uni_m;
  for (const auto& [q, j] : objects.pairs) {
    uni_t.push_back(t.unimodal[j]);
    uni_m.push_back(t.unimodal_mask[j]);
  }
  Tensor det = zero(tape), mp = zero(tape), uni = zero(tape);
  for (const auto& layer : out.layers) {
    det = add(det, detection_layer(tape, layer.boxes, t, objects, w));
    mp = add(mp, map_layer(tape, layer.map, t, map, w));
    uni = add(uni, masked_l1(tape, layer.unimodal, slots, uni_t, uni_m));
  }
  terms.detection = scale(det, inv_layers);
  terms.map = scale(mp, inv_layers);
  terms.unimodal = scale(uni, inv_layers);
  if (cfg.velocity_mode == model::VelocityMode::kRegressFromMt && !slots.empty()) {
    std::vector<std::vector<double>> vel, ones;
    for (const auto& [q, j] : objects.pairs) {
      vel.push_back({t.objects[j].velocity.x, t.objects[j].velocity.y});
      ones.push_back({1.0, 1.0});
    }
    terms.unimodal = add(terms.unimodal, masked_l1(tape, out.velocity, slots, vel, ones));
  }

  if (out.multimodal) {
    Tensor mm = zero(tape);
    std::size_t count = 0;
    for (const auto& [q, j] : objects.pairs) {
      const Tensor traj = gather_rows(out.multimodal->trajectories, {q});
      const Tensor conf = gather_rows(out.multimodal->confidences, {q});
      double valid = 0.0;
      for (double m : t.future_mask[j]) valid += m;
      if (valid == 0.0) continue;
      mm = add(mm, multimodal_loss(tape, traj, conf, t.future[j], t.future_mask[j], cfg.modes));
      ++count;
    }
    terms.multimodal = count > 0 ? scale(mm, 1.0 / static_cast<double>(count)) : mm;
  }
  if (out.plan.valid()) terms.planning = planning_loss(tape, out.plan, t.expert_plan, t.plan_step_boxes, w.safety_radius);
  return terms;
}

Tensor LossTerms::total(const LossWeights& w, bool stage2) const {
  Tensor t = add(add(scale(detection, w.detection), scale(map, w.map)), scale(unimodal, w.unimodal));
  if (stage2) {
    if (!multimodal.valid() || !planning.valid())
      throw std::logic_error("stage-2 loss needs the multimodal and planning heads");
    t = add(t, add(scale(multimodal, w.multimodal), scale(planning, w.planning)));
  }
  return t;
}

}  // namespace dmad::train
