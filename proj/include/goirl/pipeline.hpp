#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "goirl/refiner.hpp"
#include "goirl/train_irl.hpp"

namespace goirl {

struct PipelineConfig {
  int L = kDefaultPlans;
  int K = kDefaultModes;
  int degree = kBezierDegree;
  SolveMode mode = SolveMode::kStationary;
  int sweeps = 50;
  double tol = 1e-6;
  bool uniform_reward = false;  // ablation: replace the learned reward by the zero-head output
};

inline Json pipeline_config_json(const PipelineConfig& c) {
  return Json{{"L", c.L},           {"K", c.K},         {"degree", c.degree},
              {"mode", to_string(c.mode)}, {"sweeps", c.sweeps}, {"tol", c.tol},
              {"uniform_reward", c.uniform_reward}};
}

/// Reward maps of a reward head with all parameters zero.
inline RewardMaps uniform_reward(int states) {
  return {Vector::Constant(states, -kRewardMargin - std::log(2.0)), Vector::Zero(states)};
}

/// Stage-1 outputs and the K proposals of one scene.
struct SceneInference {
  PreparedScene prep;
  Context ctx;
  SolveResult sol;
  SvfTable svf;
  std::vector<Plan> plans;
  std::vector<Trajectory> plan_trajectories;  // Bezier proposal per plan
  ClusterResult clusters;
  std::vector<int> medoids;  // representative plan index per cluster
  double v0 = 0.0;
  std::vector<std::string> warnings;

  int modes() const { return static_cast<int>(clusters.clusters.size()); }

  std::vector<Trajectory> proposals() const {
    std::vector<Trajectory> out;
    for (const auto& c : clusters.clusters) out.push_back(c.representative);
    return out;
  }

  RowVector p_mcmc() const {
    RowVector p(modes());
    for (int k = 0; k < modes(); ++k) p(k) = clusters.clusters[static_cast<std::size_t>(k)].p_mcmc;
    return p;
  }

  /// Refiner input; holds pointers into this object.
  RefinerScene refiner_scene(const MdpSpec& mdp = {}) const {
    RefinerScene sc;
    sc.history = target_history(prep.scene);
    sc.fine = &ctx.fine;
    sc.h0 = ctx.h0();
    sc.coarse = &ctx.coarse;
    sc.reward = &sol_reward;
    sc.coarse_grid = mdp.grid;
    sc.proposals = proposals();
    for (int m : medoids) sc.plans.push_back(plans[static_cast<std::size_t>(m)].states);
    sc.p_mcmc = p_mcmc();
    return sc;
  }

  Vector sol_reward;  // transient reward actually used by the solver
};

/// Plan → constant-speed walk → least-squares Bezier → t_f samples.
inline Trajectory plan_proposal(const Plan& plan, const GridSpec& grid, double v0, int degree = kBezierDegree,
                                int t_f = kFutureSteps) {
  const Trajectory walk = time_parameterize(plan_to_polyline(plan, grid), v0, t_f);
  return sample_at_timestamps(fit_control_points(walk, degree).curve, t_f);
}

/// Runs stage 1 and proposal generation. `prep.gate` decides which fine
/// cells keep their features.
inline SceneInference infer_proposals(const ContextModel& model, PreparedScene prep, const PipelineConfig& cfg,
                                      std::uint64_t seed, const MdpSpec& mdp = {}) {
  require(cfg.L >= cfg.K && cfg.K >= 1, "pipeline: need L >= K >= 1");
  SceneInference out;
  out.prep = std::move(prep);
  out.ctx = model.forward(out.prep.graph, out.prep.gate, out.prep.scene.fine_grid());
  if (cfg.uniform_reward) out.ctx.reward = uniform_reward(mdp.num_states());
  out.sol_reward = out.ctx.reward.R;
  out.sol = soft_value_iteration(out.ctx.reward, mdp, cfg.mode, cfg.sweeps, cfg.tol);
  if (out.sol.warning) out.warnings.push_back(*out.sol.warning);
  out.svf = expected_svf(out.sol.policy, mdp, out.prep.s_init);
  out.plans = sample_plans(out.sol.policy, mdp, out.prep.s_init, cfg.L, seed);
  out.v0 = estimate_speed(out.prep.scene);
  out.plan_trajectories.reserve(out.plans.size());
  for (const auto& p : out.plans) out.plan_trajectories.push_back(plan_proposal(p, mdp.grid, out.v0, cfg.degree));
  out.clusters = cluster(out.plan_trajectories, cfg.K, derive_seed(seed, 1), cfg.degree);
  if (out.clusters.warning) out.warnings.push_back(*out.clusters.warning);
  for (int k = 0; k < out.modes(); ++k) out.medoids.push_back(cluster_medoid(out.clusters, k, out.plan_trajectories));
  for (const auto& w : out.prep.graph.warnings) out.warnings.push_back(w);
  return out;
}

struct Prediction {
  std::vector<Trajectory> trajectories;
  RowVector P;
  RowVector P_cls;
  RowVector p_mcmc;
  std::vector<Trajectory> proposals;
};

inline Prediction predict_scene(const Refiner& refiner, const SceneInference& inf, const MdpSpec& mdp = {}) {
  const RefinedPrediction r = refiner.forward(inf.refiner_scene(mdp));
  return {r.trajectories, r.P, r.P_cls, inf.p_mcmc(), inf.proposals()};
}

inline Trajectory gt_trajectory(const Scenario& normalized) {
  require(normalized.gt_future.has_value(), "scenario " + normalized.id + " has no gt_future");
  return future_positions(normalized);
}

// ---------------------------------------------------------------------------
// Stage-2 training
// ---------------------------------------------------------------------------

struct RefineConfig {
  int epochs = 20;
  double lr = 5e-4;
  double weight_decay = 0.0;
  int batch = 16;
  std::uint64_t seed = 0;
  RefinerWidths widths;
};

inline Json refine_config_json(const RefineConfig& c) {
  return Json{{"epochs", c.epochs}, {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"batch", c.batch}, {"seed", c.seed}};
}

struct RefineStepLog {
  int step = 0;
  double reg_proposal = 0.0, reg_trajectory = 0.0, reg_goal = 0.0, cls = 0.0, total = 0.0;
};

inline std::string refine_log_csv(const std::vector<RefineStepLog>& log) {
  std::ostringstream out;
  out << "step,L_reg^P,L_reg^T,L_reg^G,L_cls,total\n";
  char buf[200];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", e.step, e.reg_proposal, e.reg_trajectory,
                  e.reg_goal, e.cls, e.total);
    out << buf;
  }
  return out.str();
}

/// Adam over shuffled mini-batches of precomputed stage-1 inferences.
/// Logs one row per optimizer step with batch-mean losses.
inline std::vector<RefineStepLog> train_refiner(Refiner& refiner, const std::vector<SceneInference>& corpus,
                                                const RefineConfig& cfg, const MdpSpec& mdp = {},
                                                const std::function<void(int, double)>& on_epoch = {}) {
  require(!corpus.empty(), "train_refiner: empty corpus");
  require(cfg.batch >= 1 && cfg.epochs >= 0 && cfg.lr >= 0.0 && cfg.weight_decay >= 0.0,
          "train_refiner: batch >= 1, epochs >= 0, lr >= 0 and weight_decay >= 0 required");
  std::vector<RefinerScene> scenes;
  std::vector<Trajectory> gts;
  for (const auto& inf : corpus) {
    scenes.push_back(inf.refiner_scene(mdp));
    gts.push_back(gt_trajectory(inf.prep.scene));
  }
  Adam opt(cfg.lr, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, 5));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<RefineStepLog> log;
  std::vector<IrlEpochLog> epochs;  // reused for divergence detection
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch));
      const double scale = 1.0 / static_cast<double>(e - b);
      GradientBuffer gb(refiner.params());
      RefineStepLog row;
      row.step = ++step;
      for (std::size_t k = b; k < e; ++k) {
        const LossReport r = refiner.loss(scenes[order[k]], gts[order[k]], &gb, scale);
        row.reg_proposal += scale * r.reg_proposal;
        row.reg_trajectory += scale * r.reg_trajectory;
        row.reg_goal += scale * r.reg_goal;
        row.cls += scale * r.cls;
        row.total += scale * r.total;
      }
      epoch_total += row.total * static_cast<double>(e - b);
      log.push_back(row);
      refiner.params().zero_grad();
      gb.add_to(refiner.params());
      opt.step(refiner.params());
    }
    epochs.push_back({epoch, epoch_total / static_cast<double>(corpus.size()), 0.0, 0.0});
    if (on_epoch) on_epoch(epoch, epochs.back().mean_nll);
    try {
      check_divergence(epochs);
    } catch (const TrainingDivergence& e) {
      throw TrainingDivergence(std::string("stage-2: ") + e.what());
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Refiner checkpoints
// ---------------------------------------------------------------------------

inline Json refiner_widths_json(const Refiner& r) {
  const auto& w = r.widths();
  return Json{{"context", widths_to_json(r.context_widths())},
              {"location", w.location},
              {"trunk", w.trunk},
              {"embedding", {w.embedding.feature, w.embedding.reward, w.embedding.coord}},
              {"t_p", r.t_p()},
              {"t_f", r.t_f()}};
}

inline void save_refiner(const Refiner& r, const std::filesystem::path& path, const Json& config = Json()) {
  Json j{{"format", "goirl-checkpoint"}, {"version", kCheckpointVersion}, {"kind", "refiner"},
         {"widths", refiner_widths_json(r)}};
  if (!config.is_null()) j["config"] = config;
  j["tensors"] = params_to_json(r.params());
  write_text_file(path, j.dump() + "\n");
}

inline Refiner load_refiner(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("checkpoint", e.what());
  }
  if (!j.is_object() || j.value("format", "") != "goirl-checkpoint") throw ParseError("format", "not a goirl checkpoint");
  if (j.value("version", -1) != kCheckpointVersion) throw ParseError("version", "unsupported checkpoint version");
  if (j.value("kind", "") != "refiner") throw ParseError("kind", "expected a 'refiner' checkpoint");
  Refiner r;
  try {
    const Json& w = j.at("widths");
    RefinerWidths rw;
    rw.location = w.at("location").get<int>();
    rw.trunk = w.at("trunk").get<int>();
    const Json& e = w.at("embedding");
    rw.embedding = {e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()};
    r = Refiner(widths_from_json(w.at("context")), rw, w.at("t_p").get<int>(), w.at("t_f").get<int>());
  } catch (const Json::exception& e) {
    throw ParseError("widths", e.what());
  }
  if (!j.contains("tensors")) throw ParseError("tensors", "missing");
  params_from_json(j.at("tensors"), r.params());
  return r;
}

}  // namespace goirl
