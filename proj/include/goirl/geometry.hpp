#pragma once

#include <vector>

#include "goirl/core.hpp"

namespace goirl {

/// Piecewise-linear curve with arc-length queries.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> pts) : pts_(std::move(pts)) { rebuild(); }

  const std::vector<Vec2>& points() const { return pts_; }
  bool empty() const { return pts_.empty(); }
  double length() const { return cum_.empty() ? 0.0 : cum_.back(); }

  /// Point at arc length `s`, clamped to [0, length].
  Vec2 point_at(double s) const {
    require(!pts_.empty(), "point_at on empty polyline");
    if (pts_.size() == 1 || s <= 0.0) return pts_.front();
    if (s >= length()) return pts_.back();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - cum_.begin());  // s in [cum_[i-1], cum_[i])
    const double seg = cum_[i] - cum_[i - 1];
    const double u = seg > 0.0 ? (s - cum_[i - 1]) / seg : 0.0;
    return pts_[i - 1] + u * (pts_[i] - pts_[i - 1]);
  }

  /// Unit tangent at arc length `s`.
  Vec2 tangent_at(double s) const {
    require(pts_.size() >= 2, "tangent_at needs two points");
    std::size_t i = 1;
    while (i + 1 < pts_.size() && cum_[i] < s) ++i;
    const Vec2 d = pts_[i] - pts_[i - 1];
    const double n = d.norm();
    return n > 0.0 ? (1.0 / n) * d : Vec2{1.0, 0.0};
  }

  /// Resampled at uniform spacing (last point always kept).
  std::vector<Vec2> resample(double spacing) const {
    std::vector<Vec2> out;
    if (pts_.empty()) return out;
    const double L = length();
    const int n = std::max(1, static_cast<int>(std::ceil(L / spacing - 1e-9)));
    for (int k = 0; k <= n; ++k) out.push_back(point_at(L * k / n));
    return out;
  }

  /// Parallel curve shifted `d` metres to the left of the direction of travel.
  Polyline offset(double d) const {
    std::vector<Vec2> out;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      const Vec2 a = pts_[i == 0 ? 0 : i - 1];
      const Vec2 b = pts_[i + 1 < pts_.size() ? i + 1 : i];
      Vec2 t = b - a;
      const double n = t.norm();
      t = n > 0.0 ? (1.0 / n) * t : Vec2{1.0, 0.0};
      out.push_back(pts_[i] + d * Vec2{-t.y, t.x});
    }
    return Polyline(std::move(out));
  }

  void append(const Polyline& other) {
    for (Vec2 p : other.pts_)
      if (pts_.empty() || distance(pts_.back(), p) > 1e-9) pts_.push_back(p);
    rebuild();
  }

  /// Sub-curve between arc lengths a < b.
  Polyline slice(double a, double b) const {
    std::vector<Vec2> out{point_at(a)};
    for (std::size_t i = 0; i < pts_.size(); ++i)
      if (cum_[i] > a && cum_[i] < b) out.push_back(pts_[i]);
    out.push_back(point_at(b));
    return Polyline(std::move(out));
  }

 private:
  void rebuild() {
    cum_.assign(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) cum_[i] = cum_[i - 1] + distance(pts_[i - 1], pts_[i]);
  }

  std::vector<Vec2> pts_;
  std::vector<double> cum_;
};

inline Polyline line_path(Vec2 a, Vec2 b, double step = 0.5) {
  const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / step)));
  std::vector<Vec2> pts;
  for (int k = 0; k <= n; ++k) pts.push_back(a + (static_cast<double>(k) / n) * (b - a));
  return Polyline(std::move(pts));
}

/// Circular arc from angle `a0` to `a1` (radians, counter-clockwise positive).
inline Polyline arc_path(Vec2 center, double radius, double a0, double a1, double step = 0.25) {
  const int n = std::max(2, static_cast<int>(std::ceil(std::abs(a1 - a0) * radius / step)));
  std::vector<Vec2> pts;
  for (int k = 0; k <= n; ++k) {
    const double a = a0 + (a1 - a0) * k / n;
    pts.push_back(center + radius * Vec2{std::cos(a), std::sin(a)});
  }
  return Polyline(std::move(pts));
}

inline double distance_to_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  const double u = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return distance(p, a + u * ab);
}

inline double distance_to_polyline(Vec2 p, const std::vector<Vec2>& pts) {
  if (pts.size() == 1) return distance(p, pts.front());
  double best = kInf;
  for (std::size_t i = 1; i < pts.size(); ++i) best = std::min(best, distance_to_segment(p, pts[i - 1], pts[i]));
  return best;
}

/// Area within `half_width` of a polyline (rounded ends).
struct Corridor {
  std::vector<Vec2> path;
  double half_width = 0.0;
  bool contains(Vec2 p) const { return distance_to_polyline(p, path) <= half_width; }
};

/// Oriented rectangle spanning segment a→b with lateral half-width (flat ends).
struct Box {
  Vec2 a;
  Vec2 b;
  double half_width = 0.0;
  bool contains(Vec2 p) const {
    const Vec2 ab = b - a;
    const double len = ab.norm();
    if (len <= 0.0) return false;
    const Vec2 t = (1.0 / len) * ab;
    const Vec2 d = p - a;
    const double along = d.dot(t);
    const double lateral = std::abs(-t.y * d.x + t.x * d.y);
    return along >= 0.0 && along <= len && lateral <= half_width;
  }
};

}  // namespace goirl
