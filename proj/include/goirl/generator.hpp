#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "goirl/geometry.hpp"
#include "goirl/scene.hpp"

namespace goirl {

enum class SceneKind { kStraight, kCurve, kTJunction, kCrossing };

inline SceneKind parse_scene_kind(const std::string& s) {
  if (s == "straight") return SceneKind::kStraight;
  if (s == "curve") return SceneKind::kCurve;
  if (s == "t_junction") return SceneKind::kTJunction;
  if (s == "crossing") return SceneKind::kCrossing;
  throw ConfigError("unknown scenario kind '" + s + "' (expected straight|curve|t_junction|crossing)");
}

inline std::string to_string(SceneKind k) {
  switch (k) {
    case SceneKind::kStraight: return "straight";
    case SceneKind::kCurve: return "curve";
    case SceneKind::kTJunction: return "t_junction";
    case SceneKind::kCrossing: return "crossing";
  }
  return "unknown";
}

/// Knobs of the synthetic scene generator. Speeds are m/s, distances m.
struct GeneratorParams {
  double speed_min = 3.0;
  double speed_max = 7.5;
  double accel_min = -0.25;
  double accel_max = 0.25;
  double noise_sigma = 0.1;
  double block_prob = 0.3;
  double junction_min = 5.0;   // distance from the target to the junction entry
  double junction_max = 16.0;
  int neighbors_max = 3;
  bool random_world_pose = true;

  void check() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(speed_min, 2.0, 15.0) || !in(speed_max, 2.0, 15.0) || speed_min > speed_max)
      throw ConfigError("speeds must satisfy 2 <= speed_min <= speed_max <= 15");
    if (accel_min > accel_max || !in(accel_min, -3.0, 3.0) || !in(accel_max, -3.0, 3.0))
      throw ConfigError("acceleration range must lie in [-3, 3] with accel_min <= accel_max");
    if (!in(noise_sigma, 0.0, 0.5)) throw ConfigError("noise_sigma must lie in [0, 0.5]");
    if (!in(block_prob, 0.0, 1.0)) throw ConfigError("block_prob must lie in [0, 1]");
    if (junction_min < 2.0 || junction_min > junction_max || junction_max > 20.0)
      throw ConfigError("junction distance must satisfy 2 <= junction_min <= junction_max <= 20");
    if (neighbors_max < 0 || neighbors_max > 8) throw ConfigError("neighbors_max must lie in [0, 8]");
  }
};

namespace detail {

constexpr double kLaneWidth = 3.5;
constexpr double kRoadHalfWidth = 3.75;
constexpr double kArmHalfWidth = 4.0;
constexpr double kLaneSegmentLength = 16.0;
constexpr double kCenterlineSpacing = 2.0;

struct SceneBlueprint {
  std::vector<LaneSegment> lanes;
  std::vector<Corridor> roads;
  std::vector<Box> barricades;
  std::map<std::string, Polyline> mode_paths;  // full path of the target per manoeuvre
  std::vector<ModeRegion> modes;
  std::vector<Polyline> neighbor_paths;
  double target_arc = 0.0;  // arc length of the target's current position along each mode path
  std::optional<std::string> blocked_mode;

  int next_lane_id = 0;

  /// Splits `path` into `count` chained lane segments; returns their ids.
  std::vector<int> add_chain(const Polyline& path, int count, std::vector<int> pre = {}) {
    std::vector<int> ids;
    const double L = path.length();
    for (int k = 0; k < count; ++k) {
      LaneSegment seg;
      seg.id = next_lane_id++;
      seg.centerline = path.slice(L * k / count, L * (k + 1) / count).resample(kCenterlineSpacing);
      if (k == 0) seg.pre = pre;
      else seg.pre = {ids.back()};
      ids.push_back(seg.id);
      lanes.push_back(std::move(seg));
    }
    for (std::size_t k = 0; k + 1 < ids.size(); ++k) lane(ids[k]).suc.push_back(ids[k + 1]);
    for (int p : pre) lane(p).suc.push_back(ids.front());
    return ids;
  }

  static int segment_count(const Polyline& p) {
    return std::max(1, static_cast<int>(std::round(p.length() / kLaneSegmentLength)));
  }

  LaneSegment& lane(int id) {
    for (auto& l : lanes)
      if (l.id == id) return l;
    throw ContractViolation("unknown lane id");
  }

  /// Marks chains a (right) and b (left) as lateral neighbours.
  void pair(const std::vector<int>& right, const std::vector<int>& left) {
    for (std::size_t k = 0; k < std::min(right.size(), left.size()); ++k) {
      lane(right[k]).left = left[k];
      lane(left[k]).right = right[k];
    }
  }
};

inline Polyline concat(std::initializer_list<Polyline> parts) {
  Polyline out;
  for (const auto& p : parts) out.append(p);
  return out;
}

inline void build_straight(SceneBlueprint& bp, Rng& rng, const GeneratorParams& gp) {
  const Polyline ego = line_path({-60.0, 0.0}, {80.0, 0.0});
  const Polyline nb = line_path({-60.0, kLaneWidth}, {80.0, kLaneWidth});
  const int n = SceneBlueprint::segment_count(ego);
  bp.pair(bp.add_chain(ego, n), bp.add_chain(nb, n));
  bp.roads.push_back({{{-60.0, 1.75}, {80.0, 1.75}}, kRoadHalfWidth});
  bp.mode_paths["keep"] = ego;
  bp.modes.push_back({"keep", {{10.0, 0.0}, {80.0, 0.0}}, 1.75});
  bp.neighbor_paths.push_back(nb);
  bp.target_arc = 60.0;
  if (rng.bernoulli(gp.block_prob)) {
    const double o = rng.uniform(2.0, 10.0), len = rng.uniform(6.0, 14.0);
    bp.barricades.push_back({{o, 3.5}, {o + len, 3.5}, 2.0});
  }
}

inline void build_curve(SceneBlueprint& bp, Rng& rng, const GeneratorParams& gp) {
  const double start = rng.uniform(0.0, 8.0);
  const double radius = rng.uniform(25.0, 60.0);
  const double sweep = std::min(std::numbers::pi * 0.6, 70.0 / radius);
  Polyline ego = concat({line_path({-60.0, 0.0}, {start, 0.0}),
                         arc_path({start, radius}, radius, -std::numbers::pi / 2, -std::numbers::pi / 2 + sweep)});
  const Polyline nb = ego.offset(kLaneWidth);
  const int n = SceneBlueprint::segment_count(ego);
  bp.pair(bp.add_chain(ego, n), bp.add_chain(nb, n));
  bp.roads.push_back({ego.offset(1.75).resample(1.0), kRoadHalfWidth});
  bp.mode_paths["follow"] = ego;
  bp.modes.push_back({"follow", ego.slice(70.0, ego.length()).resample(2.0), 1.75});
  bp.neighbor_paths.push_back(nb);
  bp.target_arc = 60.0;
  if (rng.bernoulli(gp.block_prob)) {
    const double o = rng.uniform(2.0, 10.0), len = rng.uniform(6.0, 12.0);
    const Vec2 a = nb.point_at(60.0 + o), b = nb.point_at(60.0 + o + len);
    bp.barricades.push_back({a, b, 2.0});
  }
}

inline void build_junction(SceneBlueprint& bp, Rng& rng, const GeneratorParams& gp, bool with_right) {
  const double d = rng.uniform(gp.junction_min, gp.junction_max);
  const double xc = d + 4.0;
  const double far = 80.0;
  // Approach: ego lane (y = 0) and its left neighbour (y = 3.5).
  const Polyline ego_in = line_path({-60.0, 0.0}, {d, 0.0});
  const Polyline nb_in = line_path({-60.0, kLaneWidth}, {d, kLaneWidth});
  const int n_in = SceneBlueprint::segment_count(ego_in);
  const auto ego_ids = bp.add_chain(ego_in, n_in);
  const auto nb_ids = bp.add_chain(nb_in, n_in);
  bp.pair(ego_ids, nb_ids);

  const Polyline straight_conn = line_path({d, 0.0}, {d + 8.0, 0.0});
  const Polyline straight_out = line_path({d + 8.0, 0.0}, {far, 0.0});
  const auto sc = bp.add_chain(straight_conn, 1, {ego_ids.back()});
  const auto so = bp.add_chain(straight_out, SceneBlueprint::segment_count(straight_out), sc);
  const auto nsc = bp.add_chain(line_path({d, kLaneWidth}, {d + 8.0, kLaneWidth}), 1, {nb_ids.back()});
  const auto nso = bp.add_chain(line_path({d + 8.0, kLaneWidth}, {far, kLaneWidth}), SceneBlueprint::segment_count(straight_out), nsc);
  bp.pair(sc, nsc);
  bp.pair(so, nso);

  const double rl = xc + 1.75 - d;  // left-turn radius onto the x = xc + 1.75 lane
  const Polyline left_conn = arc_path({d, rl}, rl, -std::numbers::pi / 2, 0.0);
  const Polyline left_out = line_path({d + rl, rl}, {d + rl, far});
  const auto lc = bp.add_chain(left_conn, 1, {ego_ids.back()});
  bp.add_chain(left_out, SceneBlueprint::segment_count(left_out), lc);

  bp.roads.push_back({{{-60.0, 1.75}, {xc, 1.75}}, kRoadHalfWidth});
  bp.roads.push_back({{{xc, 1.75}, {far, 1.75}}, kRoadHalfWidth});
  bp.roads.push_back({{{xc, 1.75}, {xc, far}}, kArmHalfWidth});

  bp.mode_paths["straight"] = concat({ego_in, straight_conn, straight_out});
  bp.mode_paths["left"] = concat({ego_in, left_conn, left_out});
  bp.modes.push_back({"straight", {{d + 8.0, 1.75}, {far, 1.75}}, kRoadHalfWidth});
  bp.modes.push_back({"left", {{xc, 1.75 + kRoadHalfWidth}, {xc, far}}, kArmHalfWidth});

  if (with_right) {
    const double rr = xc - 1.75 - d;
    const Polyline right_conn = arc_path({d, -rr}, rr, std::numbers::pi / 2, 0.0);
    const Polyline right_out = line_path({d + rr, -rr}, {d + rr, -far});
    const auto rc = bp.add_chain(right_conn, 1, {ego_ids.back()});
    bp.add_chain(right_out, SceneBlueprint::segment_count(right_out), rc);
    bp.roads.push_back({{{xc, 1.75}, {xc, -far}}, kArmHalfWidth});
    bp.mode_paths["right"] = concat({ego_in, right_conn, right_out});
    bp.modes.push_back({"right", {{xc, 1.75 - kRoadHalfWidth}, {xc, -far}}, kArmHalfWidth});
  }
  bp.neighbor_paths.push_back(concat({nb_in, line_path({d, kLaneWidth}, {far, kLaneWidth})}));
  bp.neighbor_paths.push_back(line_path({d + rl, rl}, {d + rl, far}));
  bp.target_arc = 60.0;

  if (rng.bernoulli(gp.block_prob)) {
    const std::size_t m = rng.index(bp.modes.size());
    const ModeRegion& region = bp.modes[m];
    const Vec2 a = region.exit_polyline.front(), b = region.exit_polyline.back();
    const Vec2 t = (1.0 / distance(a, b)) * (b - a);
    const double o = rng.uniform(1.0, 8.0), len = rng.uniform(5.0, 12.0);
    bp.barricades.push_back({a + o * t, a + (o + len) * t, region.half_width + 0.5});
    bp.blocked_mode = region.label;
  }
}

}  // namespace detail

/// Builds a synthetic driving scene. Pure function of (kind, params, seed).
///
/// The target approaches along +x in a local frame; a random mirror and world
/// pose are applied afterwards. Speeds are capped so the 3 s future stays
/// inside the grid. The drivable mask is rasterised in the target frame
/// estimated from the noisy history, so `grid_pose` equals that frame.
inline Scenario generate_scenario(SceneKind kind, const GeneratorParams& params, std::uint64_t seed) {
  params.check();
  using namespace detail;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind) + 17));
  SceneBlueprint bp;
  switch (kind) {
    case SceneKind::kStraight: build_straight(bp, rng, params); break;
    case SceneKind::kCurve: build_curve(bp, rng, params); break;
    case SceneKind::kTJunction: build_junction(bp, rng, params, false); break;
    case SceneKind::kCrossing: build_junction(bp, rng, params, true); break;
  }

  std::vector<std::string> feasible;
  for (const auto& m : bp.modes)
    if (!bp.blocked_mode || *bp.blocked_mode != m.label) feasible.push_back(m.label);
  const std::string mode = feasible[rng.index(feasible.size())];
  const Polyline& path = bp.mode_paths.at(mode);

  const GridSpec grid = default_fine_grid();
  const double horizon_s = kFutureSteps * kStepSeconds;
  double accel = rng.uniform(params.accel_min, params.accel_max);
  double speed = rng.uniform(params.speed_min, params.speed_max);
  const double reach = grid.half_extent() - 1.5;
  const double cap = (reach - 0.5 * std::max(accel, 0.0) * horizon_s * horizon_s) / horizon_s;
  speed = std::min(speed, cap);
  auto arc_at = [&](double t) {  // t in seconds relative to now; speed never changes sign
    double tt = t;
    if (accel < 0.0) tt = std::min(tt, -speed / accel);
    if (accel > 0.0) tt = std::max(tt, -speed / accel);
    return bp.target_arc + speed * tt + 0.5 * accel * tt * tt;
  };

  const bool mirror = rng.bernoulli(0.5);
  Pose2 world;
  if (params.random_world_pose) {
    world.x = rng.uniform(-200.0, 200.0);
    world.y = rng.uniform(-200.0, 200.0);
    world.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
  }
  auto to_world = [&](Vec2 p) { return world.apply({p.x, mirror ? -p.y : p.y}); };
  auto from_world = [&](Vec2 w) {
    const Vec2 l = world.inverse_apply(w);
    return Vec2{l.x, mirror ? -l.y : l.y};
  };
  auto noisy = [&](Vec2 p) {
    return Vec2{p.x + params.noise_sigma * rng.normal(), p.y + params.noise_sigma * rng.normal()};
  };

  Scenario s;
  char idbuf[64];
  std::snprintf(idbuf, sizeof idbuf, "%s-%016llx", to_string(kind).c_str(), static_cast<unsigned long long>(seed));
  s.id = idbuf;
  s.resolution_m = grid.resolution;
  s.grid_side = grid.side;
  for (auto lane : bp.lanes) {
    for (auto& p : lane.centerline) p = to_world(p);
    if (mirror) std::swap(lane.left, lane.right);
    s.lanes.push_back(std::move(lane));
  }

  AgentTrack target{0, true, {}};
  for (int k = 0; k < kHistorySteps; ++k) {
    const int t = k - (kHistorySteps - 1);
    const Vec2 p = to_world(noisy(path.point_at(arc_at(t * kStepSeconds))));
    target.track.push_back({t, p.x, p.y, true});
  }
  s.agents.push_back(target);

  const int n_neighbors = static_cast<int>(rng.index(static_cast<std::size_t>(params.neighbors_max) + 1));
  for (int i = 0; i < n_neighbors; ++i) {
    const Polyline& np = bp.neighbor_paths[rng.index(bp.neighbor_paths.size())];
    const double v = rng.uniform(3.0, 8.0);
    const double s0 = rng.uniform(20.0, std::max(21.0, np.length() - 10.0));
    const int invalid_prefix = static_cast<int>(rng.index(6));
    AgentTrack a{i + 1, false, {}};
    for (int k = 0; k < kHistorySteps; ++k) {
      const int t = k - (kHistorySteps - 1);
      const Vec2 p = to_world(noisy(np.point_at(s0 + v * t * kStepSeconds)));
      a.track.push_back({t, p.x, p.y, k >= invalid_prefix});
    }
    s.agents.push_back(std::move(a));
  }

  std::vector<FuturePoint> future;
  for (int t = 1; t <= kFutureSteps; ++t) {
    const Vec2 p = to_world(noisy(path.point_at(arc_at(t * kStepSeconds))));
    future.push_back({t, p.x, p.y});
  }
  s.gt_future = std::move(future);
  s.mode_label = mode;

  // Rasterise drivable area in the estimated target frame.
  const TargetPose tp = estimate_target_pose(s.agents.front());
  s.grid_pose = tp.pose;
  s.drivable_mask.assign(static_cast<std::size_t>(grid.size()), 0);
  for (int i = 0; i < grid.size(); ++i) {
    const Vec2 local = from_world(tp.pose.apply(grid.center(i)));
    bool on = false;
    for (const auto& r : bp.roads) on = on || r.contains(local);
    for (const auto& b : bp.barricades) on = on && !b.contains(local);
    s.drivable_mask[static_cast<std::size_t>(i)] = on ? 1 : 0;
  }

  s.metadata.kind = to_string(kind);
  for (auto m : bp.modes) {
    for (auto& p : m.exit_polyline) p = to_world(p);
    s.metadata.modes.push_back(std::move(m));
  }
  s.metadata.blocked_mode = bp.blocked_mode;
  return s;
}

inline Scenario generate_scenario(const std::string& kind, const GeneratorParams& params, std::uint64_t seed) {
  return generate_scenario(parse_scene_kind(kind), params, seed);
}

}  // namespace goirl

namespace goirl {

/// Membership in a manoeuvre's exit region (flat-ended boxes along the polyline).
inline bool mode_region_contains(const ModeRegion& m, Vec2 p) {
  for (std::size_t i = 1; i < m.exit_polyline.size(); ++i)
    if (Box{m.exit_polyline[i - 1], m.exit_polyline[i], m.half_width}.contains(p)) return true;
  return false;
}

/// Drivable fine cells of a normalized scene lying in the exit region `label`.
inline std::vector<Cell> branch_cells(const Scenario& normalized, const std::string& label) {
  const ModeRegion* region = nullptr;
  for (const auto& m : normalized.metadata.modes)
    if (m.label == label) region = &m;
  require(region != nullptr, "scenario has no mode '" + label + "'");
  const GridSpec g = normalized.fine_grid();
  std::vector<Cell> out;
  for (int i = 0; i < g.size(); ++i)
    if (normalized.drivable_mask[static_cast<std::size_t>(i)] && mode_region_contains(*region, g.center(i)))
      out.push_back(g.cell(i));
  return out;
}

}  // namespace goirl
