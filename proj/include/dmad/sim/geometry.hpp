#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace dmad::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

// Planar rectangle centered at `center`; `length` runs along `heading`.
struct OrientedBox {
  Vec2 center;
  double width = 0.0;
  double length = 0.0;
  double heading = 0.0;

  std::array<Vec2, 4> corners() const;
};

// Separating-axis test; touching boxes count as overlapping.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

// Distance from `p` to the boundary-or-interior of the box (0 inside).
double point_box_distance(Vec2 p, const OrientedBox& box);
// Closest point of the box (boundary or interior) to `p`.
Vec2 closest_point_on_box(Vec2 p, const OrientedBox& box);

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);
double point_polyline_distance(Vec2 p, std::span<const Vec2> polyline);

// Arc-length parameterization of a polyline.
class PolylinePath {
 public:
  explicit PolylinePath(std::vector<Vec2> points);

  double length() const { return cumulative_.back(); }
  Vec2 at(double s) const;
  // Unit tangent at arc length `s`.
  Vec2 tangent(double s) const;
  // Arc length of the closest point and signed lateral offset (left positive).
  std::pair<double, double> project(Vec2 p) const;
  const std::vector<Vec2>& points() const { return points_; }

 private:
  std::size_t segment(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

double wrap_angle(double a);

}  // namespace dmad::sim
