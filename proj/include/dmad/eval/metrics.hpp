#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmad/eval/runner.hpp"

namespace dmad::eval {

inline const std::vector<double> kDetectionThresholds = {0.5, 1.0, 2.0, 4.0};
inline const std::vector<double> kChamferThresholds = {0.5, 1.0, 1.5};
inline constexpr double kVelocityThreshold = 2.0;
inline constexpr double kTrackingThreshold = 2.0;

// 101-point interpolated average precision from a score-ordered TP/FP list.
double average_precision(const std::vector<bool>& tp_in_score_order, std::size_t num_gt);

// Pairs of (dump, ground-truth episode) evaluated together.
struct EvalItem {
  const EpisodeDump* dump = nullptr;
  const sim::Episode* episode = nullptr;
};

struct DetectionMetrics {
  std::optional<double> map;   // absent without ground truth
  std::optional<double> mave;  // absent without true positives
  // Per threshold, AP averaged over categories with ground truth.
  std::vector<double> ap_per_threshold;
};
DetectionMetrics detection_metrics(const std::vector<EvalItem>& items);
// AP for one category and threshold, exposed for tests.
double detection_ap(const std::vector<EvalItem>& items, int label, double threshold);

struct TrackingMetrics {
  std::optional<double> mota;
  long id_switches = 0;
  long false_negatives = 0;
  long false_positives = 0;
  long ground_truth = 0;
};
TrackingMetrics tracking_metrics(const std::vector<EvalItem>& items, double threshold = kTrackingThreshold);

struct MapMetrics {
  std::optional<double> chamfer_ap;
};
double chamfer_distance(const std::vector<sim::Vec2>& a, const std::vector<sim::Vec2>& b);
MapMetrics map_metrics(const std::vector<EvalItem>& items);

struct PredictionMetrics {
  std::optional<double> epa;
  std::optional<double> min_ade;
  long hits = 0;
  long false_positives = 0;
  long ground_truth = 0;
};
struct EpaParams {
  double alpha = 0.5;
  double hit_threshold = 2.0;
  double match_threshold = 2.0;
};
PredictionMetrics prediction_metrics(const std::vector<EvalItem>& items, std::size_t future_steps,
                                     const EpaParams& params = {});

struct PlanningMetrics {
  std::optional<double> l2_1s, l2_2s, l2_3s;
  std::optional<double> collision_rate;  // percent of frames
};
// A plan collides when the ego box at any waypoint overlaps a ground-truth
// object box at the same future timestep. Plans shorter than 3 s throw.
bool plan_collides(const std::vector<sim::Vec2>& plan, const sim::Episode& ep, int frame);
PlanningMetrics planning_metrics(const std::vector<EvalItem>& items, double dt);

struct MetricReport {
  std::string manifest_hash;
  DetectionMetrics detection;
  TrackingMetrics tracking;
  MapMetrics map;
  PredictionMetrics prediction;
  PlanningMetrics planning;
};
MetricReport evaluate(const std::vector<EvalItem>& items, std::size_t future_steps, double dt,
                      const std::string& manifest_hash);

inline constexpr int kMetricCsvSchema = 1;
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);
// Header plus one row.
std::string metric_csv(const MetricReport& r);

}  // namespace dmad::eval
