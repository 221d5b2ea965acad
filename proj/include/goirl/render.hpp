#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>

#include "goirl/scene.hpp"
#include "goirl/scene_io.hpp"

namespace goirl {

/// Fixed meters-to-pixels transform shared by every layer.
struct SvgFrame {
  double half_extent = 25.0;
  double scale = 10.0;  // px per meter

  double px(double x) const { return (x + half_extent) * scale; }
  double py(double y) const { return (half_extent - y) * scale; }
  double size() const { return 2.0 * half_extent * scale; }
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string points_attr(const SvgFrame& f, const std::vector<Vec2>& pts) {
  std::string out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) out += ' ';
    out += fmt(f.px(pts[i].x)) + "," + fmt(f.py(pts[i].y));
  }
  return out;
}

inline std::vector<Vec2> json_points(const Json& j) {
  std::vector<Vec2> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

inline void cell_rect(std::ostringstream& o, const SvgFrame& f, const GridSpec& g, Cell c, const std::string& attrs) {
  const Vec2 ctr = g.center(c);
  const double h = 0.5 * g.resolution;
  o << "<rect x=\"" << fmt(f.px(ctr.x - h)) << "\" y=\"" << fmt(f.py(ctr.y + h)) << "\" width=\""
    << fmt(g.resolution * f.scale) << "\" height=\"" << fmt(g.resolution * f.scale) << "\" " << attrs << "/>\n";
}

inline const char* mode_color(std::size_t k) {
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                 "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
  return colors[k % 10];
}

}  // namespace detail

/// Layered SVG of a target-frame scenario and, optionally, a prediction
/// payload. Layer ids: lanes, drivable, reward, plans, predictions.
inline std::string render_svg(const Scenario& normalized, const Json* payload = nullptr) {
  using namespace detail;
  const GridSpec fine = normalized.fine_grid();
  const SvgFrame f{fine.half_extent(), 10.0};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(f.size()) << "\" height=\"" << fmt(f.size())
    << "\" viewBox=\"0 0 " << fmt(f.size()) << " " << fmt(f.size()) << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  o << "<g id=\"drivable\">\n";
  for (int i = 0; i < fine.size(); ++i)
    if (normalized.drivable_mask[static_cast<std::size_t>(i)])
      cell_rect(o, f, fine, fine.cell(i), "fill=\"#d9d9d9\"");
  for (const Cell& c : normalized.blocked_cells) cell_rect(o, f, fine, c, "class=\"blocked\" fill=\"#7f0000\" fill-opacity=\"0.6\"");
  o << "</g>\n";

  o << "<g id=\"reward\">\n";
  if (payload && payload->contains("reward")) {
    const Json& R = payload->at("reward");
    const int side = static_cast<int>(R.size());
    const GridSpec coarse{side, 2.0 * fine.half_extent() / side};
    double lo = kInf, hi = -kInf;
    for (const auto& row : R)
      for (const auto& v : row) lo = std::min(lo, v.get<double>()), hi = std::max(hi, v.get<double>());
    const double span = hi > lo ? hi - lo : 1.0;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double a = 0.6 * (R[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>() - lo) / span;
        cell_rect(o, f, coarse, {r, c}, "fill=\"#ffbf00\" fill-opacity=\"" + fmt(a) + "\"");
      }
  }
  o << "</g>\n";

  o << "<g id=\"lanes\" fill=\"none\" stroke=\"#404040\" stroke-width=\"1\">\n";
  for (const auto& l : normalized.lanes)
    o << "<polyline data-lane=\"" << l.id << "\" points=\"" << points_attr(f, l.centerline) << "\"/>\n";
  o << "<polyline class=\"history\" stroke=\"#000000\" stroke-width=\"2\" points=\""
    << points_attr(f, target_history(normalized)) << "\"/>\n";
  o << "</g>\n";

  o << "<g id=\"plans\" fill=\"none\" stroke=\"#1f77b4\" stroke-opacity=\"0.15\" stroke-width=\"1\">\n";
  if (payload && payload->contains("plans")) {
    const int side = static_cast<int>(payload->at("reward").size());
    const GridSpec coarse{side, 2.0 * fine.half_extent() / side};
    for (const auto& plan : payload->at("plans")) {
      std::vector<Vec2> pts;
      for (const auto& c : plan) pts.push_back(coarse.center(Cell{c.at(0).get<int>(), c.at(1).get<int>()}));
      o << "<polyline points=\"" << points_attr(f, pts) << "\"/>\n";
    }
  }
  o << "</g>\n";

  o << "<g id=\"predictions\" fill=\"none\" stroke-width=\"2.5\">\n";
  if (payload && payload->contains("trajectories")) {
    const Json& T = payload->at("trajectories");
    const Json& P = payload->at("probabilities");
    require(T.size() == P.size(), "render: trajectory and probability counts differ");
    double pmax = 0.0;
    for (const auto& p : P) pmax = std::max(pmax, p.get<double>());
    for (std::size_t k = 0; k < T.size(); ++k) {
      const double p = P[k].get<double>();
      const std::vector<Vec2> pts = json_points(T[k]);
      const double opacity = pmax > 0.0 ? 0.2 + 0.8 * p / pmax : 1.0;
      char prob[32];
      std::snprintf(prob, sizeof prob, "%.17g", p);
      o << "<polyline class=\"prediction\" data-k=\"" << k << "\" data-probability=\"" << prob << "\" stroke=\""
        << mode_color(k) << "\" stroke-opacity=\"" << fmt(opacity) << "\" points=\"" << points_attr(f, pts)
        << "\"/>\n";
      if (!pts.empty())
        o << "<text x=\"" << fmt(f.px(pts.back().x) + 4) << "\" y=\"" << fmt(f.py(pts.back().y)) << "\" fill=\""
          << mode_color(k) << "\" font-size=\"12\">" << fmt(p) << "</text>\n";
    }
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

}  // namespace goirl
