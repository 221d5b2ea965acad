#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "goirl/metrics.hpp"
#include "goirl/pipeline.hpp"

namespace goirl {

/// Stage-1 inference for a whole corpus. Every scene uses the same seed.
inline std::vector<SceneInference> infer_corpus(const ContextModel& model, const std::vector<PreparedScene>& corpus,
                                                const PipelineConfig& cfg, std::uint64_t seed, const MdpSpec& mdp = {}) {
  std::vector<SceneInference> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) out.push_back(infer_proposals(model, p, cfg, seed, mdp));
  return out;
}

/// Full pipeline on every scenario; scenarios without gt are skipped and
/// counted. `timing` = false leaves wall_ms at 0 so the CSV is byte-stable.
inline MetricReport evaluate_corpus(const ContextModel& model, const Refiner& refiner,
                                    const std::vector<Scenario>& scenarios, const PipelineConfig& cfg,
                                    std::uint64_t seed, const MdpSpec& mdp = {}, bool timing = false) {
  using Clock = std::chrono::steady_clock;
  MetricReport rep;
  for (const auto& raw : scenarios) {
    if (!raw.gt_future || raw.gt_future->empty()) {
      ++rep.skipped;
      continue;
    }
    const auto t0 = Clock::now();
    const SceneInference inf = infer_proposals(model, prepare_scene(raw, mdp), cfg, seed, mdp);
    const Prediction pred = predict_scene(refiner, inf, mdp);
    MetricRow row = score_scene(raw.id, pred.trajectories, pred.P, gt_trajectory(inf.prep.scene));
    if (timing) row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    rep.rows.push_back(std::move(row));
  }
  summarize(rep);
  return rep;
}

}  // namespace goirl
