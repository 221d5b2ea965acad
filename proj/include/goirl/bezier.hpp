#pragma once

#include <map>
#include <mutex>
#include <vector>

#include <Eigen/QR>

#include "goirl/scene.hpp"

namespace goirl {

constexpr int kBezierDegree = 5;

struct BezierCurve {
  std::vector<Vec2> control;  // degree + 1 points
  int degree() const { return static_cast<int>(control.size()) - 1; }
};

using Trajectory = std::vector<Vec2>;

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// C(n,i) t^i (1-t)^(n-i).
inline double bernstein(int i, int n, double t) {
  require(n >= 0 && i >= 0 && i <= n, "bernstein: need 0 <= i <= n");
  require(t >= 0.0 && t <= 1.0, "bernstein: t must lie in [0, 1]");
  return binomial(n, i) * std::pow(t, i) * std::pow(1.0 - t, n - i);
}

/// de Casteljau evaluation.
inline Vec2 bezier_eval(const BezierCurve& c, double t) {
  require(!c.control.empty(), "bezier_eval: curve has no control points");
  require(t >= 0.0 && t <= 1.0, "bezier_eval: t must lie in [0, 1]");
  std::vector<Vec2> b = c.control;
  for (std::size_t r = 1; r < b.size(); ++r)
    for (std::size_t i = 0; i + r < b.size(); ++i) b[i] = (1.0 - t) * b[i] + t * b[i + 1];
  return b.front();
}

/// Direct Bernstein-sum evaluation (reference for de Casteljau).
inline Vec2 bezier_eval_bernstein(const BezierCurve& c, double t) {
  Vec2 out;
  const int n = c.degree();
  for (int i = 0; i <= n; ++i) out = out + bernstein(i, n, t) * c.control[static_cast<std::size_t>(i)];
  return out;
}

/// Positions at t = 1/t_f, ..., t_f/t_f.
inline Trajectory sample_at_timestamps(const BezierCurve& c, int t_f = kFutureSteps) {
  require(t_f >= 1, "sample_at_timestamps: t_f must be >= 1");
  Trajectory out;
  out.reserve(static_cast<std::size_t>(t_f));
  for (int s = 1; s <= t_f; ++s) out.push_back(bezier_eval(c, static_cast<double>(s) / t_f));
  return out;
}

/// Walks the polyline at constant speed; point k sits at arc length
/// min(k * v0 * dt, total), for k = 1..t_f.
inline Trajectory time_parameterize(const std::vector<Vec2>& waypoints, double v0, int t_f = kFutureSteps,
                                    double dt = kStepSeconds) {
  require(!waypoints.empty(), "time_parameterize: empty waypoints");
  require(v0 >= 0.0 && std::isfinite(v0), "time_parameterize: speed must be finite and non-negative");
  require(t_f >= 1 && dt > 0.0, "time_parameterize: t_f >= 1 and dt > 0 required");
  Trajectory out;
  out.reserve(static_cast<std::size_t>(t_f));
  std::size_t seg = 0;
  double seg_start = 0.0;  // arc length at waypoints[seg]
  for (int k = 1; k <= t_f; ++k) {
    const double s = k * v0 * dt;
    while (seg + 1 < waypoints.size() && seg_start + distance(waypoints[seg], waypoints[seg + 1]) < s) {
      seg_start += distance(waypoints[seg], waypoints[seg + 1]);
      ++seg;
    }
    if (seg + 1 == waypoints.size()) {
      out.push_back(waypoints.back());
      continue;
    }
    const double len = distance(waypoints[seg], waypoints[seg + 1]);
    const double u = len > 0.0 ? std::clamp((s - seg_start) / len, 0.0, 1.0) : 0.0;
    out.push_back((1.0 - u) * waypoints[seg] + u * waypoints[seg + 1]);
  }
  return out;
}

struct BezierFit {
  BezierCurve curve;
  double residual = 0.0;  // sum of squared errors
};

namespace detail {

/// Least-squares solver (pseudo-inverse) for samples at t_s = s / m, s = 1..m.
inline const Matrix& bezier_fit_operator(int m, int n) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, Matrix> cache;
  std::lock_guard lock(mu);
  auto it = cache.find({m, n});
  if (it != cache.end()) return it->second;
  Matrix A(m, n + 1);
  for (int s = 0; s < m; ++s)
    for (int i = 0; i <= n; ++i) A(s, i) = bernstein(i, n, static_cast<double>(s + 1) / m);
  Eigen::ColPivHouseholderQR<Matrix> qr(A);
  require(qr.rank() == n + 1, "fit_control_points: rank-deficient Bernstein design (" + std::to_string(m) +
                                  " samples for degree " + std::to_string(n) + ")");
  Matrix pinv = qr.solve(Matrix::Identity(m, m));
  return cache.emplace(std::make_pair(m, n), std::move(pinv)).first->second;
}

}  // namespace detail

/// Least-squares control points for samples y_s at t_s = s / m, s = 1..m.
inline BezierFit fit_control_points(const Trajectory& points, int degree = kBezierDegree) {
  require(degree >= 0, "fit_control_points: negative degree");
  const int m = static_cast<int>(points.size());
  require(m >= degree + 1, "fit_control_points: need at least " + std::to_string(degree + 1) + " points, got " +
                               std::to_string(m));
  const Matrix& P = detail::bezier_fit_operator(m, degree);
  Matrix Y(m, 2);
  for (int s = 0; s < m; ++s) Y.row(s) << points[static_cast<std::size_t>(s)].x, points[static_cast<std::size_t>(s)].y;
  const Matrix C = P * Y;
  BezierFit out;
  for (int i = 0; i <= degree; ++i) out.curve.control.push_back({C(i, 0), C(i, 1)});
  for (int s = 0; s < m; ++s) {
    const Vec2 d = bezier_eval(out.curve, static_cast<double>(s + 1) / m) - points[static_cast<std::size_t>(s)];
    out.residual += d.dot(d);
  }
  return out;
}

}  // namespace goirl
