#include "dmad/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dmad/train/hungarian.hpp"

namespace dmad::eval {

namespace {

double dist2d(const Point3& a, Vec2 b) { return std::hypot(a[0] - b.x, a[1] - b.y); }

const sim::WorldState& state_at(const EvalItem& it, int frame) {
  if (frame < 0 || static_cast<std::size_t>(frame) >= it.episode->states.size())
    throw std::out_of_range("dump frame outside the episode");
  return it.episode->states[static_cast<std::size_t>(frame)];
}

struct Scored {
  double score;
  std::size_t item, frame, index;
};

// Score-descending order with a deterministic tie-break on position.
void sort_scored(std::vector<Scored>& v) {
  std::stable_sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
}

struct GreedyResult {
  std::vector<bool> tp;
  std::vector<std::pair<const Detection*, const sim::ObjectTruth*>> pairs;
  std::size_t num_gt = 0;
};

// Score-ordered greedy matching of `label` detections to the nearest free
// ground truth of that label within `threshold`.
GreedyResult greedy_detection(const std::vector<EvalItem>& items, int label, double threshold) {
  GreedyResult r;
  std::vector<Scored> preds;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<bool>> used;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t f = 0; f < items[i].dump->frames.size(); ++f) {
      const auto& fd = items[i].dump->frames[f];
      const auto& st = state_at(items[i], fd.frame);
      for (const auto& o : st.objects)
        if (static_cast<int>(o.category) == label) ++r.num_gt;
      used[{i, f}].assign(st.objects.size(), false);
      for (std::size_t d = 0; d < fd.detections.size(); ++d)
        if (fd.detections[d].label == label) preds.push_back({fd.detections[d].score, i, f, d});
    }
  }
  sort_scored(preds);
  for (const auto& p : preds) {
    const auto& fd = items[p.item].dump->frames[p.frame];
    const auto& det = fd.detections[p.index];
    const auto& objs = state_at(items[p.item], fd.frame).objects;
    auto& u = used[{p.item, p.frame}];
    std::size_t best = objs.size();
    double best_d = threshold;
    for (std::size_t g = 0; g < objs.size(); ++g) {
      if (u[g] || static_cast<int>(objs[g].category) != label) continue;
      const double d = dist2d(det.center, objs[g].position);
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    const bool hit = best < objs.size();
    r.tp.push_back(hit);
    if (hit) {
      u[best] = true;
      r.pairs.emplace_back(&det, &objs[best]);
    }
  }
  return r;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double average_precision(const std::vector<bool>& tp, std::size_t num_gt) {
  if (num_gt == 0) throw std::invalid_argument("average precision needs ground truth");
  std::vector<double> precision, recall;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (tp[k]) ++hits;
    precision.push_back(static_cast<double>(hits) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(hits) / static_cast<double>(num_gt));
  }
  // Precision envelope from the right.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  std::size_t k = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    while (k < recall.size() && recall[k] < r) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return sum / 101.0;
}

double detection_ap(const std::vector<EvalItem>& items, int label, double threshold) {
  const auto g = greedy_detection(items, label, threshold);
  return average_precision(g.tp, g.num_gt);
}

DetectionMetrics detection_metrics(const std::vector<EvalItem>& items) {
  DetectionMetrics m;
  std::vector<double> all;
  for (double thr : kDetectionThresholds) {
    std::vector<double> per_cat;
    for (int label = 0; label < static_cast<int>(sim::kNumCategories); ++label) {
      const auto g = greedy_detection(items, label, thr);
      if (g.num_gt > 0) per_cat.push_back(average_precision(g.tp, g.num_gt));
    }
    if (per_cat.empty()) return m;
    m.ap_per_threshold.push_back(*mean_of(per_cat));
    all.insert(all.end(), per_cat.begin(), per_cat.end());
  }
  m.map = mean_of(all);
  std::vector<double> errors;
  for (int label = 0; label < static_cast<int>(sim::kNumCategories); ++label)
    for (const auto& [det, gt] : greedy_detection(items, label, kVelocityThreshold).pairs)
      errors.push_back((det->velocity - gt->velocity).norm());
  m.mave = mean_of(errors);
  return m;
}

TrackingMetrics tracking_metrics(const std::vector<EvalItem>& items, double threshold) {
  TrackingMetrics m;
  for (const auto& it : items) {
    std::map<int, int> last_match;  // gt id -> prediction id
    for (const auto& fd : it.dump->frames) {
      const auto& objs = state_at(it, fd.frame).objects;
      std::vector<const Detection*> preds;
      for (const auto& d : fd.detections)
        if (d.id >= 0) preds.push_back(&d);
      m.ground_truth += static_cast<long>(objs.size());
      std::vector<int> gt_to_pred(objs.size(), -1);
      std::vector<bool> pred_used(preds.size(), false);
      // Keep last frame's correspondences that are still valid.
      for (std::size_t g = 0; g < objs.size(); ++g) {
        const auto lm = last_match.find(objs[g].id);
        if (lm == last_match.end()) continue;
        for (std::size_t p = 0; p < preds.size(); ++p)
          if (!pred_used[p] && preds[p]->id == lm->second && dist2d(preds[p]->center, objs[g].position) < threshold) {
            gt_to_pred[g] = static_cast<int>(p);
            pred_used[p] = true;
            break;
          }
      }
      std::vector<std::size_t> gs, ps;
      for (std::size_t g = 0; g < objs.size(); ++g)
        if (gt_to_pred[g] < 0) gs.push_back(g);
      for (std::size_t p = 0; p < preds.size(); ++p)
        if (!pred_used[p]) ps.push_back(p);
      std::vector<double> cost(gs.size() * ps.size());
      for (std::size_t a = 0; a < gs.size(); ++a)
        for (std::size_t b = 0; b < ps.size(); ++b) {
          const double d = dist2d(preds[ps[b]]->center, objs[gs[a]].position);
          cost[a * ps.size() + b] = d < threshold ? d : std::numeric_limits<double>::infinity();
        }
      for (const auto& [a, b] : train::hungarian(cost, gs.size(), ps.size()).pairs) {
        if (!std::isfinite(cost[a * ps.size() + b])) continue;
        gt_to_pred[gs[a]] = static_cast<int>(ps[b]);
        pred_used[ps[b]] = true;
      }
      for (std::size_t g = 0; g < objs.size(); ++g) {
        if (gt_to_pred[g] < 0) {
          ++m.false_negatives;
          continue;
        }
        const int pid = preds[static_cast<std::size_t>(gt_to_pred[g])]->id;
        const auto lm = last_match.find(objs[g].id);
        if (lm != last_match.end() && lm->second != pid) ++m.id_switches;
        last_match[objs[g].id] = pid;
      }
      for (bool u : pred_used)
        if (!u) ++m.false_positives;
    }
  }
  if (m.ground_truth > 0) {
    const double errors = static_cast<double>(m.false_negatives + m.false_positives + m.id_switches);
    m.mota = std::max(0.0, 1.0 - errors / static_cast<double>(m.ground_truth));
  }
  return m;
}

double chamfer_distance(const std::vector<sim::Vec2>& a, const std::vector<sim::Vec2>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer distance of an empty polyline");
  auto directed = [](const std::vector<sim::Vec2>& from, const std::vector<sim::Vec2>& to) {
    double s = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      s += best;
    }
    return s / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

MapMetrics map_metrics(const std::vector<EvalItem>& items) {
  MapMetrics m;
  std::vector<double> aps;
  for (double thr : kChamferThresholds) {
    for (int label = 0; label < static_cast<int>(sim::kNumMapCategories); ++label) {
      std::vector<Scored> preds;
      std::map<std::pair<std::size_t, std::size_t>, std::vector<bool>> used;
      std::size_t num_gt = 0;
      for (std::size_t i = 0; i < items.size(); ++i)
        for (std::size_t f = 0; f < items[i].dump->frames.size(); ++f) {
          const auto& polys = items[i].episode->map.polylines;
          for (const auto& pl : polys)
            if (static_cast<int>(pl.category) == label) ++num_gt;
          used[{i, f}].assign(polys.size(), false);
          const auto& md = items[i].dump->frames[f].map;
          for (std::size_t d = 0; d < md.size(); ++d)
            if (md[d].label == label) preds.push_back({md[d].score, i, f, d});
        }
      if (num_gt == 0) continue;
      sort_scored(preds);
      std::vector<bool> tp;
      for (const auto& p : preds) {
        const auto& det = items[p.item].dump->frames[p.frame].map[p.index];
        const auto& polys = items[p.item].episode->map.polylines;
        auto& u = used[{p.item, p.frame}];
        std::size_t best = polys.size();
        double best_d = thr;
        for (std::size_t g = 0; g < polys.size(); ++g) {
          if (u[g] || static_cast<int>(polys[g].category) != label) continue;
          const double d = chamfer_distance(det.vertices, {polys[g].vertices.begin(), polys[g].vertices.end()});
          if (d < best_d) {
            best_d = d;
            best = g;
          }
        }
        tp.push_back(best < polys.size());
        if (best < polys.size()) u[best] = true;
      }
      aps.push_back(average_precision(tp, num_gt));
    }
  }
  m.chamfer_ap = mean_of(aps);
  return m;
}

PredictionMetrics prediction_metrics(const std::vector<EvalItem>& items, std::size_t future_steps,
                                     const EpaParams& params) {
  PredictionMetrics m;
  std::vector<double> ades;
  for (const auto& it : items) {
    const auto& states = it.episode->states;
    for (const auto& fd : it.dump->frames) {
      const auto& objs = state_at(it, fd.frame).objects;
      // Future positions and validity per ground-truth object.
      std::vector<std::vector<std::pair<std::size_t, Vec2>>> futures(objs.size());
      for (std::size_t g = 0; g < objs.size(); ++g)
        for (std::size_t t = 1; t <= future_steps; ++t) {
          const std::size_t s = static_cast<std::size_t>(fd.frame) + t;
          if (s >= states.size()) break;
          if (const auto* o = states[s].find(objs[g].id)) futures[g].emplace_back(t - 1, o->position);
        }
      for (const auto& f : futures)
        if (!f.empty()) ++m.ground_truth;

      std::vector<const Detection*> preds;
      for (const auto& d : fd.detections)
        if (d.id >= 0) preds.push_back(&d);
      std::stable_sort(preds.begin(), preds.end(),
                       [](const Detection* a, const Detection* b) { return a->score > b->score; });
      std::vector<bool> used(objs.size(), false);
      for (const auto* p : preds) {
        std::size_t best = objs.size();
        double best_d = params.match_threshold;
        for (std::size_t g = 0; g < objs.size(); ++g) {
          if (used[g] || static_cast<int>(objs[g].category) != p->label) continue;
          const double d = dist2d(p->center, objs[g].position);
          if (d < best_d) {
            best_d = d;
            best = g;
          }
        }
        if (best == objs.size()) {
          ++m.false_positives;
          continue;
        }
        used[best] = true;
        const auto& fut = futures[best];
        if (fut.empty()) continue;
        double min_ade = std::numeric_limits<double>::infinity();
        for (const auto& mode : p->trajectories) {
          if (mode.size() < future_steps) continue;
          double s = 0.0;
          for (const auto& [t, pos] : fut) s += (mode[t] - pos).norm();
          min_ade = std::min(min_ade, s / static_cast<double>(fut.size()));
        }
        if (!std::isfinite(min_ade)) continue;
        ades.push_back(min_ade);
        if (min_ade < params.hit_threshold) ++m.hits;
      }
    }
  }
  if (m.ground_truth > 0)
    m.epa = std::max(0.0, (static_cast<double>(m.hits) - params.alpha * static_cast<double>(m.false_positives)) /
                              static_cast<double>(m.ground_truth));
  m.min_ade = mean_of(ades);
  return m;
}

bool plan_collides(const std::vector<sim::Vec2>& plan, const sim::Episode& ep, int frame) {
  const std::size_t need = static_cast<std::size_t>(std::lround(3.0 / ep.config.dt));
  if (plan.size() < need) throw std::invalid_argument("plan shorter than 3 s");
  const auto& start = ep.states.at(static_cast<std::size_t>(frame)).ego;
  Vec2 prev = start.position;
  double heading = start.heading;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const std::size_t s = static_cast<std::size_t>(frame) + k + 1;
    if (s >= ep.states.size()) break;
    const Vec2 step = plan[k] - prev;
    if (step.norm() > 1e-6) heading = std::atan2(step.y, step.x);
    const sim::OrientedBox ego{plan[k], sim::kEgoWidth, sim::kEgoLength, heading};
    for (const auto& o : ep.states[s].objects)
      if (sim::boxes_overlap(ego, o.box())) return true;
    prev = plan[k];
  }
  return false;
}

PlanningMetrics planning_metrics(const std::vector<EvalItem>& items, double dt) {
  PlanningMetrics m;
  const std::size_t per_second = static_cast<std::size_t>(std::lround(1.0 / dt));
  std::vector<double> l2[3];
  std::size_t frames = 0, collisions = 0;
  for (const auto& it : items)
    for (const auto& fd : it.dump->frames) {
      if (fd.plan.empty()) continue;
      const auto& expert = state_at(it, fd.frame).expert_plan;
      if (fd.plan.size() < 3 * per_second || expert.size() < 3 * per_second)
        throw std::invalid_argument("plan shorter than 3 s");
      for (std::size_t h = 0; h < 3; ++h) {
        const std::size_t k = (h + 1) * per_second - 1;
        l2[h].push_back((fd.plan[k] - expert[k]).norm());
      }
      ++frames;
      if (plan_collides(fd.plan, *it.episode, fd.frame)) ++collisions;
    }
  m.l2_1s = mean_of(l2[0]);
  m.l2_2s = mean_of(l2[1]);
  m.l2_3s = mean_of(l2[2]);
  if (frames > 0) m.collision_rate = 100.0 * static_cast<double>(collisions) / static_cast<double>(frames);
  return m;
}

MetricReport evaluate(const std::vector<EvalItem>& items, std::size_t future_steps, double dt,
                      const std::string& manifest_hash) {
  MetricReport r;
  r.manifest_hash = manifest_hash;
  r.detection = detection_metrics(items);
  r.tracking = tracking_metrics(items);
  r.map = map_metrics(items);
  r.prediction = prediction_metrics(items, future_steps);
  r.planning = planning_metrics(items, dt);
  return r;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::string metric_csv_header() {
  return "schema,manifest_hash,mAP,mAVE,MOTA,IDS,chamfer_AP,EPA,minADE,L2_1s,L2_2s,L2_3s,collision_rate";
}

std::string metric_csv_row(const MetricReport& r) {
  std::ostringstream out;
  out << kMetricCsvSchema << ',' << r.manifest_hash << ',' << fmt(r.detection.map) << ',' << fmt(r.detection.mave)
      << ',' << fmt(r.tracking.mota) << ',' << r.tracking.id_switches << ',' << fmt(r.map.chamfer_ap) << ','
      << fmt(r.prediction.epa) << ',' << fmt(r.prediction.min_ade) << ',' << fmt(r.planning.l2_1s) << ','
      << fmt(r.planning.l2_2s) << ',' << fmt(r.planning.l2_3s) << ',' << fmt(r.planning.collision_rate);
  return out.str();
}

std::string metric_csv(const MetricReport& r) { return metric_csv_header() + "\n" + metric_csv_row(r) + "\n"; }

}  // namespace dmad::eval
