#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "goirl/pipeline.hpp"

namespace goirl {

constexpr int kMaxPayloadPlans = 50;

/// Probability-weighted sample of at most `max_plans` plan indices without
/// replacement (Gumbel top-k on the plan log-probabilities). Ascending order.
inline std::vector<int> decimate_plans(const std::vector<Plan>& plans, int max_plans, std::uint64_t seed) {
  require(max_plans >= 0, "decimate_plans: max_plans must be >= 0");
  std::vector<int> idx(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) idx[i] = static_cast<int>(i);
  if (static_cast<int>(plans.size()) <= max_plans) return idx;
  Rng rng(derive_seed(seed, 6));
  std::vector<double> key(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    key[i] = plans[i].log_prob - std::log(-std::log(u));
  }
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key[static_cast<std::size_t>(a)] > key[static_cast<std::size_t>(b)]; });
  idx.resize(static_cast<std::size_t>(max_plans));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Row-major grid as a list of rows; row r is the r-th northward offset.
inline Json grid_json(const Vector& v, int side) {
  require(v.size() == static_cast<Eigen::Index>(side) * side, "grid_json: size mismatch");
  Json rows = Json::array();
  for (int r = 0; r < side; ++r) {
    Json row = Json::array();
    for (int c = 0; c < side; ++c) row.push_back(v(r * side + c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json trajectory_json(const Trajectory& t) {
  Json out = Json::array();
  for (const Vec2& p : t) out.push_back(Json::array({p.x, p.y}));
  return out;
}

inline Json curve_json(const BezierCurve& c) {
  Json pts = Json::array();
  for (const Vec2& p : c.control) pts.push_back(Json::array({p.x, p.y}));
  return Json{{"degree", c.degree()}, {"control", std::move(pts)}};
}

inline Json row_vector_json(const RowVector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

struct PayloadOptions {
  int max_plans = kMaxPayloadPlans;
  bool all_plans = false;
};

/// Prediction payload shared by `predict` and the service. Coordinates are in
/// the target frame; grids are 25x25 row-major with (row, col) =
/// (north offset, east offset) from the south-west corner.
inline Json prediction_payload(const SceneInference& inf, const Prediction& pred, const PipelineConfig& cfg,
                               std::uint64_t seed, const MdpSpec& mdp = {}, const PayloadOptions& opt = {}) {
  const int side = mdp.grid.side;
  Json j;
  j["scenario_id"] = inf.prep.scene.id;
  j["K"] = static_cast<int>(pred.trajectories.size());
  j["L"] = cfg.L;
  j["seed"] = seed;
  j["frame"] = "target";
  j["grid"] = Json{{"side", side},
                   {"resolution_m", mdp.grid.resolution},
                   {"layout", "row-major; row = north offset, col = east offset, origin at the south-west corner"}};
  j["reward"] = grid_json(inf.sol_reward, side);
  j["svf"] = grid_json(inf.svf.mu, side);

  const std::vector<int> keep =
      opt.all_plans ? decimate_plans(inf.plans, static_cast<int>(inf.plans.size()), seed)
                    : decimate_plans(inf.plans, opt.max_plans, seed);
  Json plans = Json::array();
  for (int i : keep) {
    Json cells = Json::array();
    for (int s : inf.plans[static_cast<std::size_t>(i)].states) {
      const Cell c = mdp.grid.cell(s);
      cells.push_back(Json::array({c.row, c.col}));
    }
    plans.push_back(std::move(cells));
  }
  j["plans"] = std::move(plans);
  j["plan_indices"] = keep;

  Json traj = Json::array();
  for (const auto& t : pred.trajectories) traj.push_back(trajectory_json(t));
  j["trajectories"] = std::move(traj);
  j["probabilities"] = row_vector_json(pred.P);
  j["p_cls"] = row_vector_json(pred.P_cls);
  j["p_mcmc"] = row_vector_json(pred.p_mcmc);
  Json props = Json::array(), curves = Json::array();
  for (const auto& c : inf.clusters.clusters) {
    props.push_back(trajectory_json(c.representative));
    curves.push_back(curve_json(c.curve));
  }
  j["proposals"] = std::move(props);
  j["proposal_curves"] = std::move(curves);
  j["warnings"] = inf.warnings;
  return j;
}

}  // namespace goirl
