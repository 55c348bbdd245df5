#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "scenegen/rng.hpp"

namespace scenegen {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  Vec2 rotated(double angle) const {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * x - s * y, s * x + c * y};
  }
  Vec2 normalized() const {
    const double n = norm();
    return n > 0.0 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
  }
};

// Closed ring of vertices, counter-clockwise, first vertex not repeated.
using Polygon = std::vector<Vec2>;
using Polyline = std::vector<Vec2>;

// Normalizes an angle to [0, 2*pi).
inline double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;  // fmod rounding can land exactly on 2*pi
  return a;
}

// Signed smallest difference a-b mapped to (-pi, pi].
inline double angle_diff(double a, double b) {
  double d = std::fmod(a - b, kTwoPi);
  if (d <= -3.141592653589793) d += kTwoPi;
  if (d > 3.141592653589793) d -= kTwoPi;
  return d;
}

// Even-odd rule point-in-polygon test. Points exactly on an edge follow the
// half-open crossing rule, which is adequate for pixel-center sampling.
inline bool point_in_polygon(Vec2 p, const Polygon& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly[i], b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double t = (p.y - a.y) / (b.y - a.y);
      if (p.x < a.x + t * (b.x - a.x)) inside = !inside;
    }
  }
  return inside;
}

inline double polygon_area(const Polygon& poly) {
  double s = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
    s += (poly[j].x + poly[i].x) * (poly[i].y - poly[j].y);
  return 0.5 * s;
}

// Liang-Barsky segment clip against an axis-aligned box. Returns false when
// the segment lies entirely outside.
inline bool clip_segment(Vec2& a, Vec2& b, double lo_x, double lo_y, double hi_x, double hi_y) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const std::array<double, 4> p = {-dx, dx, -dy, dy};
  const std::array<double, 4> q = {a.x - lo_x, hi_x - a.x, a.y - lo_y, hi_y - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      if (r > t1) return false;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return false;
      t1 = std::min(t1, r);
    }
  }
  const Vec2 a0 = a;
  a = {a0.x + t0 * dx, a0.y + t0 * dy};
  b = {a0.x + t1 * dx, a0.y + t1 * dy};
  return true;
}

// Oriented rectangle in the plane: center, half extents, heading of the
// length axis.
struct ObbGeom {
  Vec2 center;
  double half_length = 0.0;  // along the heading axis
  double half_width = 0.0;   // across
  double heading = 0.0;

  Vec2 axis_long() const { return {std::cos(heading), std::sin(heading)}; }
  Vec2 axis_lat() const { return {-std::sin(heading), std::cos(heading)}; }

  std::array<Vec2, 4> corners() const {
    const Vec2 u = axis_long() * half_length;
    const Vec2 v = axis_lat() * half_width;
    return {center + u + v, center - u + v, center - u - v, center + u - v};
  }

  bool contains(Vec2 p) const {
    const Vec2 d = p - center;
    return std::abs(d.dot(axis_long())) <= half_length &&
           std::abs(d.dot(axis_lat())) <= half_width;
  }
};

// Separating-axis overlap test over the four edge normals. Touching edges
// (zero-area intersection) do not count as overlap.
inline bool obb_overlap(const ObbGeom& a, const ObbGeom& b) {
  const Vec2 d = b.center - a.center;
  const std::array<Vec2, 4> axes = {a.axis_long(), a.axis_lat(), b.axis_long(), b.axis_lat()};
  for (const Vec2& ax : axes) {
    const double ra = a.half_length * std::abs(ax.dot(a.axis_long())) +
                      a.half_width * std::abs(ax.dot(a.axis_lat()));
    const double rb = b.half_length * std::abs(ax.dot(b.axis_long())) +
                      b.half_width * std::abs(ax.dot(b.axis_lat()));
    if (std::abs(d.dot(ax)) >= ra + rb) return false;
  }
  return true;
}

}  // namespace scenegen
