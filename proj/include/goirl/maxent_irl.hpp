#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "goirl/core.hpp"
#include "goirl/grid.hpp"
#include "goirl/scene.hpp"

namespace goirl {

constexpr int kNumActions = 9;
constexpr int kEndAction = 8;

/// Row/column offsets of the eight compass moves: E, NE, N, NW, W, SW, S, SE.
inline constexpr std::array<std::array<int, 2>, 8> kMoves{{
    {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1},
}};

/// Grid MDP with deterministic compass moves and an end action into a sink.
struct MdpSpec {
  GridSpec grid = default_coarse_grid();
  int horizon = kHorizon;

  int num_states() const { return grid.size(); }

  /// Successor of `s` under move `a` (0..7), or -1 when it leaves the grid.
  int next(int s, int a) const {
    const Cell c = grid.cell(s);
    const Cell n{c.row + kMoves[static_cast<std::size_t>(a)][0], c.col + kMoves[static_cast<std::size_t>(a)][1]};
    return grid.contains(n) ? grid.index(n) : -1;
  }

  /// The move taking `s` to the 8-neighbour `t`, or -1.
  int action_between(int s, int t) const {
    for (int a = 0; a < 8; ++a)
      if (next(s, a) == t) return a;
    return -1;
  }

  Cell center_cell() const { return {grid.side / 2, grid.side / 2}; }
  int center_state() const { return grid.index(center_cell()); }
};

/// Transient reward R and terminal reward R_g, one entry per coarse state.
struct RewardMaps {
  Vector R;
  Vector R_g;
};

enum class SolveMode { kStationary, kFiniteHorizon };

inline SolveMode parse_solve_mode(const std::string& s) {
  if (s == "stationary") return SolveMode::kStationary;
  if (s == "finite_horizon") return SolveMode::kFiniteHorizon;
  throw ConfigError("unknown solver mode '" + s + "' (expected stationary|finite_horizon)");
}

inline std::string to_string(SolveMode m) { return m == SolveMode::kStationary ? "stationary" : "finite_horizon"; }

/// Soft values. Stationary mode keeps one layer; finite-horizon mode keeps H
/// layers indexed by time step. Q layers are S×9 with -inf for invalid moves.
struct SoftValues {
  std::vector<Vector> V;
  std::vector<Matrix> Q;
  double residual = 0.0;  // stationary: sup |V_N - V_{N-1}|
  int sweeps = 0;
};

/// Per-step action distributions. Step H-1 always ends the rollout.
class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(std::vector<Matrix> steps, int horizon, bool stationary, std::vector<Matrix> log_steps = {})
      : steps_(std::move(steps)), log_steps_(std::move(log_steps)), horizon_(horizon), stationary_(stationary) {
    if (log_steps_.empty())
      for (const auto& m : steps_) log_steps_.push_back(m.array().log().matrix());
    if (stationary_) {
      Matrix forced = Matrix::Zero(steps_.front().rows(), kNumActions);
      forced.col(kEndAction).setOnes();
      log_steps_.push_back(forced.array().log().matrix());
      steps_.push_back(std::move(forced));
    }
  }

  int horizon() const { return horizon_; }
  bool stationary() const { return stationary_; }

  /// The same stationary policy truncated at a different horizon.
  PolicyTable with_horizon(int horizon) const {
    require(stationary_, "only stationary policies can be re-truncated");
    require(horizon >= 1, "horizon must be positive");
    PolicyTable out = *this;
    out.horizon_ = horizon;
    return out;
  }
  int num_states() const { return static_cast<int>(steps_.front().rows()); }

  const Matrix& at(int t) const {
    require(t >= 0 && t < horizon_, "policy step out of range");
    if (stationary_) return t == horizon_ - 1 ? steps_[1] : steps_[0];
    return steps_[static_cast<std::size_t>(t)];
  }
  double prob(int t, int s, int a) const { return at(t)(s, a); }

  /// log pi computed in the log domain, so it stays finite where pi underflows.
  double log_prob(int t, int s, int a) const {
    require(t >= 0 && t < horizon_, "policy step out of range");
    const std::size_t k = stationary_ ? (t == horizon_ - 1 ? 1 : 0) : static_cast<std::size_t>(t);
    return log_steps_[k](s, a);
  }

 private:
  std::vector<Matrix> steps_;
  std::vector<Matrix> log_steps_;
  int horizon_ = 0;
  bool stationary_ = true;
};

struct SolveResult {
  SoftValues values;
  PolicyTable policy;
  std::optional<std::string> warning;  // non-convergence in stationary mode
};

namespace detail {

/// One backward step: Q(s,end) = R + R_g, Q(s,move) = R + V_next(s'), V = lse Q.
inline void soft_bellman(const MdpSpec& mdp, const RewardMaps& r, const Vector* v_next, Matrix& Q, Vector& V) {
  const int S = mdp.num_states();
  Q.resize(S, kNumActions);
  V.resize(S);
  std::array<double, kNumActions> row{};
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < 8; ++a) {
      const int n = mdp.next(s, a);
      row[static_cast<std::size_t>(a)] = (n < 0 || v_next == nullptr) ? -kInf : r.R(s) + (*v_next)(n);
    }
    row[kEndAction] = r.R(s) + r.R_g(s);
    for (int a = 0; a < kNumActions; ++a) Q(s, a) = row[static_cast<std::size_t>(a)];
    V(s) = logsumexp(row);
  }
}

inline Matrix policy_from(const Matrix& Q, const Vector& V, Matrix* log_pi = nullptr) {
  Matrix pi(Q.rows(), Q.cols());
  if (log_pi) log_pi->resize(Q.rows(), Q.cols());
  for (Eigen::Index s = 0; s < Q.rows(); ++s) {
    double total = 0.0;
    for (Eigen::Index a = 0; a < Q.cols(); ++a) {
      pi(s, a) = Q(s, a) == -kInf ? 0.0 : std::exp(Q(s, a) - V(s));
      total += pi(s, a);
    }
    pi.row(s) /= total;  // removes rounding drift so rows sum to 1 to machine precision
    if (log_pi)
      for (Eigen::Index a = 0; a < Q.cols(); ++a)
        (*log_pi)(s, a) = Q(s, a) == -kInf ? -kInf : Q(s, a) - V(s) - std::log(total);
  }
  return pi;
}

}  // namespace detail

inline void check_rewards(const RewardMaps& r, const MdpSpec& mdp) {
  require(r.R.size() == mdp.num_states() && r.R_g.size() == mdp.num_states(), "reward maps do not match the grid");
  require(r.R.allFinite() && r.R_g.allFinite(), "reward maps must be finite");
}

/// Soft value iteration. Stationary mode runs exactly `sweeps` sweeps starting
/// from V = -inf; finite-horizon mode runs the exact H-step backward pass.
inline SolveResult soft_value_iteration(const RewardMaps& reward, const MdpSpec& mdp, SolveMode mode,
                                        int sweeps = 50, double tol = 1e-6) {
  check_rewards(reward, mdp);
  require(mdp.horizon >= 1, "horizon must be positive");
  SolveResult out;
  if (mode == SolveMode::kFiniteHorizon) {
    const auto H = static_cast<std::size_t>(mdp.horizon);
    out.values.V.resize(H);
    out.values.Q.resize(H);
    detail::soft_bellman(mdp, reward, nullptr, out.values.Q[H - 1], out.values.V[H - 1]);
    for (std::size_t t = H - 1; t-- > 0;)
      detail::soft_bellman(mdp, reward, &out.values.V[t + 1], out.values.Q[t], out.values.V[t]);
    std::vector<Matrix> steps, logs(H);
    for (std::size_t t = 0; t < H; ++t) steps.push_back(detail::policy_from(out.values.Q[t], out.values.V[t], &logs[t]));
    out.values.sweeps = mdp.horizon;
    out.policy = PolicyTable(std::move(steps), mdp.horizon, false, std::move(logs));
    return out;
  }

  require(sweeps >= 1, "sweep count must be positive");
  require(reward.R.maxCoeff() <= -kRewardMargin + 1e-12, "stationary mode requires R <= -r_min");
  Vector V = Vector::Constant(mdp.num_states(), -kInf);
  Matrix Q;
  Vector V_new;
  double residual = kInf;
  for (int k = 0; k < sweeps; ++k) {
    detail::soft_bellman(mdp, reward, k == 0 ? nullptr : &V, Q, V_new);
    if (k > 0) residual = (V_new - V).cwiseAbs().maxCoeff();
    V.swap(V_new);
  }
  out.values.V = {V};
  out.values.Q = {Q};
  out.values.residual = residual;
  out.values.sweeps = sweeps;
  if (!(residual <= tol))
    out.warning = "soft value iteration not converged after " + std::to_string(sweeps) +
                  " sweeps (residual " + std::to_string(residual) + ")";
  Matrix log_pi;
  Matrix pi = detail::policy_from(Q, V, &log_pi);
  out.policy = PolicyTable({std::move(pi)}, mdp.horizon, true, {std::move(log_pi)});
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force plan distribution
// ---------------------------------------------------------------------------

using PlanDistribution = std::map<std::vector<int>, double>;

/// Every plan from `s_init` with probability exp(sum R + R_g(last)) / Z.
/// Guarded to grids of at most 5×5 and H ≤ 6.
inline PlanDistribution enumerate_path_distribution(const RewardMaps& reward, const MdpSpec& mdp, int horizon,
                                                    int s_init) {
  if (mdp.grid.side > 5 || horizon > 6)
    throw SizeGuardError("enumeration refused: grid " + std::to_string(mdp.grid.side) + "x" +
                         std::to_string(mdp.grid.side) + ", H=" + std::to_string(horizon) +
                         " exceeds 5x5, H<=6");
  check_rewards(reward, mdp);
  require(s_init >= 0 && s_init < mdp.num_states(), "s_init out of range");
  std::vector<std::pair<std::vector<int>, double>> plans;  // plan, log weight
  std::vector<int> path{s_init};
  auto dfs = [&](auto&& self, double acc) -> void {
    const int s = path.back();
    const double here = acc + reward.R(s);
    plans.emplace_back(path, here + reward.R_g(s));
    if (static_cast<int>(path.size()) == horizon) return;
    for (int a = 0; a < 8; ++a) {
      const int n = mdp.next(s, a);
      if (n < 0) continue;
      path.push_back(n);
      self(self, here);
      path.pop_back();
    }
  };
  dfs(dfs, 0.0);
  std::vector<double> logw;
  logw.reserve(plans.size());
  for (const auto& p : plans) logw.push_back(p.second);
  const double logZ = logsumexp(logw);
  PlanDistribution out;
  for (const auto& [plan, lw] : plans) out[plan] += std::exp(lw - logZ);
  return out;
}

/// Probability that rolling out `policy` from plan[0] produces exactly `plan`.
inline double plan_probability(const std::vector<int>& plan, const PolicyTable& policy, const MdpSpec& mdp) {
  require(!plan.empty() && static_cast<int>(plan.size()) <= policy.horizon(), "plan length out of range");
  double p = 1.0;
  for (std::size_t t = 0; t + 1 < plan.size(); ++t) {
    const int a = mdp.action_between(plan[t], plan[t + 1]);
    if (a < 0) return 0.0;
    p *= policy.prob(static_cast<int>(t), plan[t], a);
  }
  return p * policy.prob(static_cast<int>(plan.size()) - 1, plan.back(), kEndAction);
}

// ---------------------------------------------------------------------------
// State visitation frequencies
// ---------------------------------------------------------------------------

struct SvfTable {
  std::vector<Vector> D;         // occupancy at each step t < H
  Vector mu;                     // sum_t D_t (transient visits)
  std::vector<double> end_mass;  // mass taking the end action at step t
  Vector terminal;               // per-state expected end visits
};

inline SvfTable expected_svf(const PolicyTable& policy, const MdpSpec& mdp, int s_init) {
  const int S = mdp.num_states();
  require(s_init >= 0 && s_init < S, "s_init out of range");
  require(policy.num_states() == S, "policy does not match the grid");
  SvfTable out;
  out.mu = Vector::Zero(S);
  out.terminal = Vector::Zero(S);
  Vector D = Vector::Zero(S);
  D(s_init) = 1.0;
  for (int t = 0; t < policy.horizon(); ++t) {
    const Matrix& pi = policy.at(t);
    out.D.push_back(D);
    out.mu += D;
    Vector next = Vector::Zero(S);
    double ended = 0.0;
    for (int s = 0; s < S; ++s) {
      const double m = D(s);
      if (m == 0.0) continue;
      const double e = m * pi(s, kEndAction);
      ended += e;
      out.terminal(s) += e;
      for (int a = 0; a < 8; ++a) {
        const double p = pi(s, a);
        if (p == 0.0) continue;
        next(mdp.next(s, a)) += m * p;
      }
    }
    out.end_mass.push_back(ended);
    D.swap(next);
  }
  return out;
}

inline void check_demonstration(const Demonstration& d, const MdpSpec& mdp) {
  require(!d.states.empty(), "demonstration is empty");
  require(static_cast<int>(d.states.size()) <= mdp.horizon, "demonstration longer than the horizon");
  for (std::size_t i = 0; i < d.states.size(); ++i) {
    require(d.states[i] >= 0 && d.states[i] < mdp.num_states(),
            "demonstration state out of range at step " + std::to_string(i));
    if (i > 0)
      require(mdp.action_between(d.states[i - 1], d.states[i]) >= 0,
              "demonstration uses an invalid transition at step " + std::to_string(i - 1));
  }
}

/// Empirical visitation: mean visit counts and mean terminal indicators.
inline SvfTable demo_svf(const std::vector<Demonstration>& demos, const MdpSpec& mdp) {
  require(!demos.empty(), "demo_svf needs at least one demonstration");
  SvfTable out;
  out.mu = Vector::Zero(mdp.num_states());
  out.terminal = Vector::Zero(mdp.num_states());
  const double w = 1.0 / static_cast<double>(demos.size());
  for (const auto& d : demos) {
    check_demonstration(d, mdp);
    for (int s : d.states) out.mu(s) += w;
    out.terminal(d.states.back()) += w;
  }
  return out;
}

struct IrlGradient {
  Vector dR;    // d log-likelihood / dR
  Vector dR_g;  // d log-likelihood / dR_g
};

/// Ascent direction of the demonstration log-likelihood: mu_D - E[mu].
inline IrlGradient irl_gradient(const SvfTable& mu_D, const SvfTable& mu) {
  require(mu_D.mu.size() == mu.mu.size(), "SVF tables differ in size");
  return {mu_D.mu - mu.mu, mu_D.terminal - mu.terminal};
}

/// Mean over demos of sum_t log pi_t(a_t | s_t), including the end action.
inline double log_likelihood(const std::vector<Demonstration>& demos, const PolicyTable& policy, const MdpSpec& mdp) {
  require(!demos.empty(), "log_likelihood needs at least one demonstration");
  double total = 0.0;
  for (const auto& d : demos) {
    check_demonstration(d, mdp);
    for (std::size_t t = 0; t < d.states.size(); ++t) {
      const int a = t + 1 < d.states.size() ? mdp.action_between(d.states[t], d.states[t + 1]) : kEndAction;
      const double lp = policy.log_prob(static_cast<int>(t), d.states[t], a);
      require(lp > -kInf, "demonstration step " + std::to_string(t) + " is impossible under the policy");
      total += lp;
    }
  }
  return total / static_cast<double>(demos.size());
}

}  // namespace goirl
