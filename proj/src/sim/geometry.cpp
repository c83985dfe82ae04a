#include "dmad/sim/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace dmad::sim {

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f = unit(heading) * (0.5 * length);
  const Vec2 s = Vec2{-std::sin(heading), std::cos(heading)} * (0.5 * width);
  return {center + f + s, center + f - s, center - f - s, center - f + s};
}

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes = {unit(a.heading), Vec2{-std::sin(a.heading), std::cos(a.heading)},
                                    unit(b.heading), Vec2{-std::sin(b.heading), std::cos(b.heading)}};
  for (const Vec2& axis : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = -amin;
    for (const Vec2& c : ca) {
      amin = std::min(amin, c.dot(axis));
      amax = std::max(amax, c.dot(axis));
    }
    for (const Vec2& c : cb) {
      bmin = std::min(bmin, c.dot(axis));
      bmax = std::max(bmax, c.dot(axis));
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

Vec2 closest_point_on_box(Vec2 p, const OrientedBox& box) {
  const Vec2 f = unit(box.heading);
  const Vec2 s{-f.y, f.x};
  const Vec2 d = p - box.center;
  const double u = std::clamp(d.dot(f), -0.5 * box.length, 0.5 * box.length);
  const double v = std::clamp(d.dot(s), -0.5 * box.width, 0.5 * box.width);
  return box.center + f * u + s * v;
}

double point_box_distance(Vec2 p, const OrientedBox& box) {
  return (p - closest_point_on_box(p, box)).norm();
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

double point_polyline_distance(Vec2 p, std::span<const Vec2> polyline) {
  if (polyline.empty()) return std::numeric_limits<double>::infinity();
  if (polyline.size() == 1) return (p - polyline[0]).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    best = std::min(best, point_segment_distance(p, polyline[i], polyline[i + 1]));
  }
  return best;
}

PolylinePath::PolylinePath(std::vector<Vec2> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw std::invalid_argument("PolylinePath needs at least two points");
  cumulative_.push_back(0.0);
  for (std::size_t i = 1; i < points_.size(); ++i) {
    cumulative_.push_back(cumulative_.back() + (points_[i] - points_[i - 1]).norm());
  }
}

std::size_t PolylinePath::segment(double s) const {
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(idx, points_.size() - 2);
}

Vec2 PolylinePath::at(double s) const {
  const std::size_t i = segment(s);
  const double seg_len = cumulative_[i + 1] - cumulative_[i];
  const double t = seg_len > 0.0 ? (s - cumulative_[i]) / seg_len : 0.0;
  return points_[i] + (points_[i + 1] - points_[i]) * t;
}

Vec2 PolylinePath::tangent(double s) const {
  const std::size_t i = segment(s);
  const Vec2 d = points_[i + 1] - points_[i];
  const double n = d.norm();
  return n > 0.0 ? d * (1.0 / n) : Vec2{1.0, 0.0};
}

std::pair<double, double> PolylinePath::project(Vec2 p) const {
  double best = std::numeric_limits<double>::infinity();
  double best_s = 0.0, best_lat = 0.0;
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const Vec2 a = points_[i];
    const Vec2 ab = points_[i + 1] - a;
    const double len2 = ab.dot(ab);
    const double len = std::sqrt(len2);
    // Extend the first and last segments so points beyond the ends project linearly.
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    if (i > 0) t = std::max(t, 0.0);
    if (i + 2 < points_.size()) t = std::min(t, 1.0);
    const Vec2 q = a + ab * t;
    const double d = (p - q).norm();
    if (d < best) {
      best = d;
      best_s = cumulative_[i] + t * len;
      const Vec2 dir = len > 0.0 ? ab * (1.0 / len) : Vec2{1.0, 0.0};
      best_lat = dir.cross(p - q);
    }
  }
  return {best_s, best_lat};
}

double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

}  // namespace dmad::sim
