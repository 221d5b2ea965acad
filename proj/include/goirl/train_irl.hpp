#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "goirl/context_model.hpp"
#include "goirl/maxent_irl.hpp"

namespace goirl {

/// A normalised scenario with its encoder inputs and grid demonstration.
struct PreparedScene {
  Scenario scene;                       // target frame
  SceneGraph graph;
  std::vector<std::uint8_t> gate;       // effective drivable mask
  std::optional<Demonstration> demo;    // present when the scene carries gt
  bool demo_clamped = false;
  int s_init = 0;
};

inline PreparedScene prepare_scene(const Scenario& raw, const MdpSpec& mdp = {}) {
  validate(raw);
  PreparedScene p;
  p.scene = to_target_frame(raw).scenario;
  p.graph = build_scene_graph(p.scene);
  p.gate = p.scene.drivable_mask;
  p.s_init = mdp.center_state();
  if (p.scene.gt_future && !p.scene.gt_future->empty()) {
    std::vector<Vec2> pts{Vec2{0.0, 0.0}};
    for (const auto& f : *p.scene.gt_future) pts.push_back({f.x, f.y});
    auto q = quantize_future(pts, mdp.grid, mdp.horizon);
    p.demo = std::move(q.demo);
    p.demo_clamped = q.clamped;
  }
  return p;
}

struct IrlConfig {
  int epochs = 20;
  double lr = 3e-3;
  double weight_decay = 1.0;
  int batch = 8;
  std::uint64_t seed = 0;
  SolveMode mode = SolveMode::kStationary;
  int sweeps = 50;
  double tol = 1e-6;
  Widths widths;
  bool timing = false;  // record wall_ms (breaks byte-stability of the log)
};

inline Json irl_config_json(const IrlConfig& c) {
  return Json{{"epochs", c.epochs}, {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"batch", c.batch}, {"seed", c.seed},
              {"mode", to_string(c.mode)}, {"sweeps", c.sweeps}, {"tol", c.tol}};
}

struct IrlEpochLog {
  int epoch = 0;
  double mean_nll = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

inline std::string irl_log_csv(const std::vector<IrlEpochLog>& log) {
  std::ostringstream out;
  out << "epoch,mean_nll,grad_norm,wall_ms\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.3f\n", e.epoch, e.mean_nll, e.grad_norm, e.wall_ms);
    out << buf;
  }
  return out.str();
}

/// Result of one scenario's forward pass and IRL gradient.
struct SceneIrl {
  double nll = 0.0;
  std::optional<std::string> warning;
};

/// Forward pass, soft VI, SVF and the demonstration NLL of one scene. When
/// `gb` is given, the NLL gradient scaled by `scale` is accumulated into it.
inline SceneIrl scene_irl(const ContextModel& model, const PreparedScene& p, const MdpSpec& mdp, SolveMode mode,
                          int sweeps, double tol, GradientBuffer* gb = nullptr, double scale = 1.0) {
  require(p.demo.has_value(), "scene " + p.scene.id + " has no demonstration");
  ContextModel::Cache cache;
  const Context ctx = model.forward(p.graph, p.gate, p.scene.fine_grid(), gb ? &cache : nullptr);
  const SolveResult sol = soft_value_iteration(ctx.reward, mdp, mode, sweeps, tol);
  SceneIrl out;
  out.warning = sol.warning;
  const std::vector<Demonstration> demos{*p.demo};
  out.nll = -log_likelihood(demos, sol.policy, mdp);
  if (gb) {
    // A converged stationary policy is the infinite-horizon MaxEnt policy, so
    // its visitation is accumulated over as many steps as the solver swept
    // rather than cut off at H.
    const SvfTable mu = mode == SolveMode::kStationary
                            ? expected_svf(sol.policy.with_horizon(std::max(mdp.horizon, sweeps)), mdp, p.s_init)
                            : expected_svf(sol.policy, mdp, p.s_init);
    const IrlGradient g = irl_gradient(demo_svf(demos, mdp), mu);
    // Descent on the NLL: negate the likelihood ascent direction.
    model.backward(p.graph, ctx, cache, -scale * g.dR, -scale * g.dR_g, *gb);
  }
  return out;
}

inline double mean_nll(const ContextModel& model, const std::vector<PreparedScene>& corpus, const MdpSpec& mdp,
                       SolveMode mode, int sweeps, double tol) {
  double total = 0.0;
  for (const auto& p : corpus) total += scene_irl(model, p, mdp, mode, sweeps, tol).nll;
  return total / static_cast<double>(corpus.size());
}

/// Throws when the last epoch NLL is non-finite or the NLL rose in each of
/// the last `patience` epochs.
inline void check_divergence(const std::vector<IrlEpochLog>& log, int patience = 10) {
  if (log.empty()) return;
  int rising = 0;
  for (std::size_t i = log.size() - 1; i > 0 && log[i].mean_nll > log[i - 1].mean_nll; --i) ++rising;
  const IrlEpochLog& last = log.back();
  if (std::isfinite(last.mean_nll) && rising < patience) return;
  std::ostringstream msg;
  msg << "stage-1 training diverged at epoch " << last.epoch << ": mean NLL " << last.mean_nll << " after " << rising
      << " consecutive increases (epoch-0 NLL " << log.front().mean_nll << ", last grad norm " << last.grad_norm << ")";
  throw TrainingDivergence(msg.str());
}

struct IrlRun {
  std::vector<IrlEpochLog> log;
  std::vector<std::string> warnings;
};

/// Stage-1 training. Epoch 0 records the untrained corpus NLL; each later
/// epoch reports the mean NLL seen by its batches before their update.
inline IrlRun train_irl(ContextModel& model, const std::vector<PreparedScene>& corpus, const IrlConfig& cfg,
                        const MdpSpec& mdp = {}, const std::function<void(const IrlEpochLog&)>& on_epoch = {}) {
  require(!corpus.empty(), "train_irl: empty corpus");
  require(cfg.batch >= 1 && cfg.epochs >= 0 && cfg.lr >= 0.0 && cfg.weight_decay >= 0.0,
          "train_irl: batch >= 1, epochs >= 0, lr >= 0 and weight_decay >= 0 required");
  for (const auto& p : corpus) require(p.demo.has_value(), "train_irl: scene " + p.scene.id + " has no gt_future");
  using Clock = std::chrono::steady_clock;
  IrlRun run;
  auto t0 = Clock::now();
  auto elapsed = [&] {
    return cfg.timing ? std::chrono::duration<double, std::milli>(Clock::now() - t0).count() : 0.0;
  };
  run.log.push_back({0, mean_nll(model, corpus, mdp, cfg.mode, cfg.sweeps, cfg.tol), 0.0, elapsed()});
  if (on_epoch) on_epoch(run.log.back());

  Adam opt(cfg.lr, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double nll = 0.0, gnorm = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch));
      const double scale = 1.0 / static_cast<double>(e - b);
      GradientBuffer gb(model.params());
      for (std::size_t k = b; k < e; ++k) {
        const SceneIrl r = scene_irl(model, corpus[order[k]], mdp, cfg.mode, cfg.sweeps, cfg.tol, &gb, scale);
        nll += r.nll;
        if (r.warning) run.warnings.push_back("epoch " + std::to_string(epoch) + ", " + corpus[order[k]].scene.id + ": " + *r.warning);
      }
      gnorm += std::sqrt(gb.squared_norm());
      ++batches;
      model.params().zero_grad();
      gb.add_to(model.params());
      opt.step(model.params());
    }
    run.log.push_back({epoch, nll / static_cast<double>(corpus.size()), gnorm / batches, elapsed()});
    if (on_epoch) on_epoch(run.log.back());
    check_divergence(run.log);
  }
  return run;
}

}  // namespace goirl
