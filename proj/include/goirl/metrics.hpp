#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "goirl/bezier.hpp"

namespace goirl {

constexpr double kMissThreshold = 2.0;

namespace detail {

inline void check_lengths(const std::vector<Trajectory>& predictions, const Trajectory& gt) {
  require(!predictions.empty(), "metrics: no predictions");
  require(!gt.empty(), "metrics: empty ground truth");
  for (const auto& p : predictions)
    require(p.size() == gt.size(), "metrics: prediction length " + std::to_string(p.size()) + " != gt length " +
                                       std::to_string(gt.size()));
}

}  // namespace detail

inline double ade(const Trajectory& p, const Trajectory& gt) {
  double s = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) s += distance(p[t], gt[t]);
  return s / static_cast<double>(gt.size());
}

inline double fde(const Trajectory& p, const Trajectory& gt) { return distance(p.back(), gt.back()); }

inline double min_ade(const std::vector<Trajectory>& predictions, const Trajectory& gt) {
  detail::check_lengths(predictions, gt);
  double best = kInf;
  for (const auto& p : predictions) best = std::min(best, ade(p, gt));
  return best;
}

/// Index of the candidate with the smallest endpoint error; lowest on ties.
inline int best_fde_index(const std::vector<Trajectory>& predictions, const Trajectory& gt) {
  detail::check_lengths(predictions, gt);
  int best = 0;
  for (std::size_t k = 1; k < predictions.size(); ++k)
    if (fde(predictions[k], gt) < fde(predictions[static_cast<std::size_t>(best)], gt)) best = static_cast<int>(k);
  return best;
}

inline double min_fde(const std::vector<Trajectory>& predictions, const Trajectory& gt) {
  return fde(predictions[static_cast<std::size_t>(best_fde_index(predictions, gt))], gt);
}

/// 1 when every endpoint is farther than `threshold` from the gt endpoint.
inline int miss_rate(const std::vector<Trajectory>& predictions, const Trajectory& gt,
                     double threshold = kMissThreshold) {
  return min_fde(predictions, gt) > threshold ? 1 : 0;
}

/// minFDE + (1 - P(best))^2 with best the minFDE candidate.
inline double brier_min_fde(const std::vector<Trajectory>& predictions, const RowVector& probabilities,
                            const Trajectory& gt) {
  require(probabilities.size() == static_cast<Eigen::Index>(predictions.size()),
          "brier_min_fde: probability count mismatch");
  require(std::abs(probabilities.sum() - 1.0) <= 1e-9, "brier_min_fde: probabilities must sum to 1");
  const int k = best_fde_index(predictions, gt);
  const double miss = 1.0 - probabilities(k);
  return fde(predictions[static_cast<std::size_t>(k)], gt) + miss * miss;
}

struct MetricRow {
  std::string scenario_id;
  int K = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
  int miss = 0;
  double brier_min_fde = 0.0;
  double p_best = 0.0;
  double wall_ms = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  int skipped = 0;
  double mean_min_ade = 0.0;
  double mean_min_fde = 0.0;
  double miss_rate = 0.0;
  double mean_brier_min_fde = 0.0;
};

inline MetricRow score_scene(const std::string& id, const std::vector<Trajectory>& predictions,
                             const RowVector& probabilities, const Trajectory& gt) {
  MetricRow r;
  r.scenario_id = id;
  r.K = static_cast<int>(predictions.size());
  r.min_ade = min_ade(predictions, gt);
  r.min_fde = min_fde(predictions, gt);
  r.miss = miss_rate(predictions, gt);
  r.brier_min_fde = brier_min_fde(predictions, probabilities, gt);
  r.p_best = probabilities(best_fde_index(predictions, gt));
  return r;
}

inline void summarize(MetricReport& rep) {
  rep.mean_min_ade = rep.mean_min_fde = rep.miss_rate = rep.mean_brier_min_fde = 0.0;
  if (rep.rows.empty()) return;
  for (const auto& r : rep.rows) {
    rep.mean_min_ade += r.min_ade;
    rep.mean_min_fde += r.min_fde;
    rep.miss_rate += r.miss;
    rep.mean_brier_min_fde += r.brier_min_fde;
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.mean_min_ade /= n;
  rep.mean_min_fde /= n;
  rep.miss_rate /= n;
  rep.mean_brier_min_fde /= n;
}

/// Per-scenario rows in input order. `with_timing` = false writes wall_ms as
/// 0 so the file is byte-stable.
inline std::string metric_csv(const MetricReport& rep) {
  std::ostringstream out;
  out << "scenario_id,K,minADE,minFDE,MR,brier_minFDE,P_best,wall_ms\n";
  char buf[256];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, ",%d,%.9f,%.9f,%d,%.9f,%.9f,%.3f\n", r.K, r.min_ade, r.min_fde, r.miss,
                  r.brier_min_fde, r.p_best, r.wall_ms);
    out << r.scenario_id << buf;
  }
  return out.str();
}

inline std::string metric_summary_csv(const MetricReport& rep) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "scenarios,skipped,minADE,minFDE,MR,brier_minFDE\n%zu,%d,%.9f,%.9f,%.9f,%.9f\n",
                rep.rows.size(), rep.skipped, rep.mean_min_ade, rep.mean_min_fde, rep.miss_rate,
                rep.mean_brier_min_fde);
  out << buf;
  return out.str();
}

}  // namespace goirl
