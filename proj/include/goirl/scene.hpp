#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "goirl/core.hpp"
#include "goirl/grid.hpp"

namespace goirl {

constexpr int kHistorySteps = 20;   // t_p: 2 s at 10 Hz
constexpr int kFutureSteps = 30;    // t_f: 3 s at 10 Hz
constexpr double kStepSeconds = 0.1;
constexpr int kHorizon = 25;        // H

struct LaneSegment {
  int id = 0;
  std::vector<Vec2> centerline;
  std::vector<int> pre;
  std::vector<int> suc;
  std::optional<int> left;
  std::optional<int> right;
  friend bool operator==(const LaneSegment&, const LaneSegment&) = default;
};

struct TrackSample {
  int t = 0;
  double x = 0.0;
  double y = 0.0;
  bool valid = true;
  friend bool operator==(const TrackSample&, const TrackSample&) = default;
};

struct AgentTrack {
  int id = 0;
  bool is_target = false;
  std::vector<TrackSample> track;
  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

struct FuturePoint {
  int t = 0;
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const FuturePoint&, const FuturePoint&) = default;
};

/// Exit corridor of one feasible manoeuvre, e.g. the left branch of a T-junction.
struct ModeRegion {
  std::string label;
  std::vector<Vec2> exit_polyline;
  double half_width = 0.0;
  friend bool operator==(const ModeRegion&, const ModeRegion&) = default;
};

struct ScenarioMetadata {
  std::string kind;
  std::vector<ModeRegion> modes;
  std::optional<std::string> blocked_mode;
  friend bool operator==(const ScenarioMetadata&, const ScenarioMetadata&) = default;
};

/// One driving scene. Geometry is in world coordinates unless the scene has
/// been passed through to_target_frame. The drivable mask is expressed in the
/// grid frame `grid_pose` (identity once normalized).
struct Scenario {
  std::string id;
  double resolution_m = 1.0;
  int grid_side = 50;
  std::vector<LaneSegment> lanes;
  std::vector<std::uint8_t> drivable_mask;  // grid_side² cells, row-major
  std::vector<AgentTrack> agents;
  std::optional<std::vector<FuturePoint>> gt_future;
  std::optional<std::string> mode_label;
  Pose2 grid_pose;
  std::vector<Cell> blocked_cells;  // drivable cells closed by an edit
  ScenarioMetadata metadata;

  friend bool operator==(const Scenario&, const Scenario&) = default;

  GridSpec fine_grid() const { return {grid_side, resolution_m}; }
  bool drivable(Cell c) const { return drivable_mask[static_cast<std::size_t>(fine_grid().index(c))] != 0; }
};

struct Demonstration {
  std::vector<int> states;  // coarse cell indices
  bool ended = true;
  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

inline bool eight_connected(const GridSpec& g, int a, int b) {
  const Cell ca = g.cell(a), cb = g.cell(b);
  const int dr = std::abs(ca.row - cb.row), dc = std::abs(ca.col - cb.col);
  return std::max(dr, dc) == 1;
}

inline std::size_t target_index(const Scenario& s) {
  std::size_t found = s.agents.size();
  int count = 0;
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    if (s.agents[i].is_target) {
      found = i;
      ++count;
    }
  }
  require(count == 1, "scenario must contain exactly one target agent (found " + std::to_string(count) + ")");
  return found;
}

/// Checks the structural invariants of a scenario. Throws ContractViolation.
inline void validate(const Scenario& s, int history_steps = kHistorySteps) {
  require(s.resolution_m > 0.0, "resolution_m must be positive");
  require(s.grid_side > 0, "grid_side must be positive");
  require(s.drivable_mask.size() == static_cast<std::size_t>(s.grid_side) * s.grid_side,
          "drivable_mask dimensions must equal grid_side^2");
  target_index(s);
  std::vector<int> ids;
  for (const auto& l : s.lanes) ids.push_back(l.id);
  auto known = [&](int id) { return std::find(ids.begin(), ids.end(), id) != ids.end(); };
  for (const auto& l : s.lanes) {
    require(l.centerline.size() >= 2, "lane " + std::to_string(l.id) + " has fewer than 2 centerline points");
    for (int r : l.pre) require(known(r), "lane " + std::to_string(l.id) + " references unknown pre " + std::to_string(r));
    for (int r : l.suc) require(known(r), "lane " + std::to_string(l.id) + " references unknown suc " + std::to_string(r));
    if (l.left) require(known(*l.left), "lane " + std::to_string(l.id) + " references unknown left lane");
    if (l.right) require(known(*l.right), "lane " + std::to_string(l.id) + " references unknown right lane");
  }
  for (const auto& a : s.agents) {
    require(static_cast<int>(a.track.size()) == history_steps,
            "agent " + std::to_string(a.id) + " track length " + std::to_string(a.track.size()) + " != " +
                std::to_string(history_steps));
    for (std::size_t i = 1; i < a.track.size(); ++i)
      require(a.track[i].t > a.track[i - 1].t, "agent " + std::to_string(a.id) + " timestamps not increasing");
  }
  const GridSpec g = s.fine_grid();
  for (const Cell& c : s.blocked_cells) require(g.contains(c), "blocked cell out of range");
}

// ---------------------------------------------------------------------------
// Target-centric normalisation
// ---------------------------------------------------------------------------

struct TargetPose {
  Pose2 pose;               // world pose of the target frame
  bool heading_degenerate = false;
};

/// Current position is the last valid sample; heading is the direction of
/// the displacement from the first to the last valid sample.
inline TargetPose estimate_target_pose(const AgentTrack& target) {
  const TrackSample* first = nullptr;
  const TrackSample* last = nullptr;
  for (const auto& smp : target.track) {
    if (!smp.valid) continue;
    if (!first) first = &smp;
    last = &smp;
  }
  require(last != nullptr, "target has no valid observation");
  TargetPose out;
  out.pose.x = last->x;
  out.pose.y = last->y;
  const double dx = last->x - first->x, dy = last->y - first->y;
  if (std::hypot(dx, dy) < 1e-6) {
    out.heading_degenerate = true;
    out.pose.yaw = 0.0;
  } else {
    out.pose.yaw = std::atan2(dy, dx);
  }
  return out;
}

struct NormalizedScenario {
  Scenario scenario;
  Pose2 applied;  // world pose of the new frame
  bool heading_degenerate = false;
};

namespace detail {

inline bool near_identity(const Pose2& p) {
  return std::abs(p.x) < 1e-9 && std::abs(p.y) < 1e-9 && std::abs(p.yaw) < 1e-9;
}

inline bool same_pose(const Pose2& a, const Pose2& b) {
  return std::abs(a.x - b.x) < 1e-9 && std::abs(a.y - b.y) < 1e-9 &&
         std::abs(std::remainder(a.yaw - b.yaw, 2.0 * std::numbers::pi)) < 1e-9;
}

}  // namespace detail

/// Rigidly maps the scene so the target sits at the origin heading +x.
/// The mask is resampled (nearest cell) only when its frame differs from the
/// new frame; a scene already in the target frame is returned unchanged.
inline NormalizedScenario to_target_frame(const Scenario& s) {
  const auto tp = estimate_target_pose(s.agents[target_index(s)]);
  NormalizedScenario out{s, tp.pose, tp.heading_degenerate};
  if (detail::near_identity(tp.pose) && detail::near_identity(s.grid_pose)) {
    out.applied = Pose2{};
    return out;
  }
  const Pose2& P = tp.pose;
  auto map = [&](Vec2 p) { return P.inverse_apply(p); };
  Scenario& n = out.scenario;
  for (auto& lane : n.lanes)
    for (auto& p : lane.centerline) p = map(p);
  for (auto& a : n.agents)
    for (auto& smp : a.track) {
      const Vec2 q = map({smp.x, smp.y});
      smp.x = q.x;
      smp.y = q.y;
    }
  if (n.gt_future)
    for (auto& f : *n.gt_future) {
      const Vec2 q = map({f.x, f.y});
      f.x = q.x;
      f.y = q.y;
    }
  for (auto& m : n.metadata.modes)
    for (auto& p : m.exit_polyline) p = map(p);

  if (!detail::same_pose(s.grid_pose, P)) {
    const GridSpec g = s.fine_grid();
    std::vector<std::uint8_t> mask(s.drivable_mask.size(), 0);
    for (int i = 0; i < g.size(); ++i) {
      const Vec2 world = P.apply(g.center(i));
      if (auto old = g.locate(s.grid_pose.inverse_apply(world)))
        mask[static_cast<std::size_t>(i)] = s.drivable_mask[static_cast<std::size_t>(g.index(*old))];
    }
    n.drivable_mask = std::move(mask);
    std::vector<Cell> blocked;
    for (const Cell& c : s.blocked_cells) {
      const Vec2 world = s.grid_pose.apply(g.center(c));
      if (auto nc = g.locate(P.inverse_apply(world))) blocked.push_back(*nc);
    }
    std::sort(blocked.begin(), blocked.end());
    blocked.erase(std::unique(blocked.begin(), blocked.end()), blocked.end());
    n.blocked_cells = std::move(blocked);
  }
  n.grid_pose = Pose2{};
  return out;
}

// ---------------------------------------------------------------------------
// Quantisation of futures into grid demonstrations
// ---------------------------------------------------------------------------

struct QuantizeResult {
  Demonstration demo;
  bool clamped = false;  // some position lay outside the grid
};

/// Maps positions to coarse cells, collapses repeats, bridges skipped cells
/// with a shortest 8-connected walk, and truncates to `horizon` states.
inline QuantizeResult quantize_future(std::span<const Vec2> positions, const GridSpec& coarse,
                                      int horizon = kHorizon) {
  require(!positions.empty(), "quantize_future: empty future");
  require(horizon >= 1, "quantize_future: horizon must be positive");
  QuantizeResult out;
  std::vector<Cell> cells;
  for (Vec2 p : positions) {
    bool clamped = false;
    const Cell c = coarse.clamp_locate(p, &clamped);
    out.clamped = out.clamped || clamped;
    if (!cells.empty() && cells.back() == c) continue;
    if (!cells.empty()) {
      Cell cur = cells.back();
      while (std::max(std::abs(c.row - cur.row), std::abs(c.col - cur.col)) > 1) {
        cur.row += (c.row > cur.row) - (c.row < cur.row);
        cur.col += (c.col > cur.col) - (c.col < cur.col);
        cells.push_back(cur);
      }
    }
    cells.push_back(c);
  }
  out.demo.ended = static_cast<int>(cells.size()) <= horizon;
  if (static_cast<int>(cells.size()) > horizon) cells.resize(static_cast<std::size_t>(horizon));
  out.demo.states.reserve(cells.size());
  for (const Cell& c : cells) out.demo.states.push_back(coarse.index(c));
  return out;
}

/// True when `d` is representable by the grid MDP.
inline bool is_valid_demonstration(const Demonstration& d, const GridSpec& coarse, int horizon = kHorizon) {
  if (d.states.empty() || static_cast<int>(d.states.size()) > horizon) return false;
  for (int s : d.states)
    if (s < 0 || s >= coarse.size()) return false;
  for (std::size_t i = 1; i < d.states.size(); ++i)
    if (!eight_connected(coarse, d.states[i - 1], d.states[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Convenience accessors (target frame assumed)
// ---------------------------------------------------------------------------

inline std::vector<Vec2> target_history(const Scenario& s) {
  std::vector<Vec2> out;
  for (const auto& smp : s.agents[target_index(s)].track) out.push_back({smp.x, smp.y});
  return out;
}

/// Mean speed over the last `window` valid history steps, in m/s.
inline double estimate_speed(const Scenario& s, int window = 5) {
  const auto& tr = s.agents[target_index(s)].track;
  double dist = 0.0;
  double time = 0.0;
  int used = 0;
  for (std::size_t i = tr.size(); i-- > 1 && used < window;) {
    if (!tr[i].valid || !tr[i - 1].valid) continue;
    dist += std::hypot(tr[i].x - tr[i - 1].x, tr[i].y - tr[i - 1].y);
    time += (tr[i].t - tr[i - 1].t) * kStepSeconds;
    ++used;
  }
  return time > 0.0 ? dist / time : 0.0;
}

inline std::vector<Vec2> future_positions(const Scenario& s) {
  std::vector<Vec2> out;
  if (s.gt_future)
    for (const auto& f : *s.gt_future) out.push_back({f.x, f.y});
  return out;
}

struct MaskEdit {
  std::vector<Cell> changed;
  std::vector<Cell> noop;  // already undrivable (block) or never blocked (revert)
};

namespace detail {

inline void check_cells(const Scenario& s, std::span<const Cell> cells) {
  const GridSpec g = s.fine_grid();
  for (const Cell& c : cells)
    if (!g.contains(c))
      throw ContractViolation("cell [" + std::to_string(c.row) + "," + std::to_string(c.col) + "] out of range for a " +
                              std::to_string(g.side) + "x" + std::to_string(g.side) + " grid");
}

}  // namespace detail

/// Turns drivable cells undrivable and records them so they can be reverted.
/// Validates every cell before touching the scenario.
inline MaskEdit block_cells(Scenario& s, std::span<const Cell> cells) {
  detail::check_cells(s, cells);
  const GridSpec g = s.fine_grid();
  MaskEdit out;
  for (const Cell& c : cells) {
    auto& m = s.drivable_mask[static_cast<std::size_t>(g.index(c))];
    if (!m) {
      out.noop.push_back(c);
      continue;
    }
    m = 0;
    s.blocked_cells.push_back(c);
    out.changed.push_back(c);
  }
  std::sort(s.blocked_cells.begin(), s.blocked_cells.end());
  return out;
}

/// Undoes earlier block_cells edits.
inline MaskEdit revert_cells(Scenario& s, std::span<const Cell> cells) {
  detail::check_cells(s, cells);
  const GridSpec g = s.fine_grid();
  MaskEdit out;
  for (const Cell& c : cells) {
    auto it = std::find(s.blocked_cells.begin(), s.blocked_cells.end(), c);
    if (it == s.blocked_cells.end()) {
      out.noop.push_back(c);
      continue;
    }
    s.blocked_cells.erase(it);
    s.drivable_mask[static_cast<std::size_t>(g.index(c))] = 1;
    out.changed.push_back(c);
  }
  return out;
}

/// Cells usable for encoding: the drivable mask plus any edit-blocked cells.
inline std::vector<std::uint8_t> encoding_mask(const Scenario& s) {
  auto m = s.drivable_mask;
  const GridSpec g = s.fine_grid();
  for (const Cell& c : s.blocked_cells) m[static_cast<std::size_t>(g.index(c))] = 1;
  return m;
}

}  // namespace goirl
