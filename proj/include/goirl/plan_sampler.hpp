#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "goirl/bezier.hpp"
#include "goirl/maxent_irl.hpp"
#include "goirl/nn.hpp"

namespace goirl {

constexpr int kDefaultPlans = 600;
constexpr int kDefaultModes = 6;

struct Plan {
  std::vector<int> states;  // coarse cells, first is s_init
  double log_prob = 0.0;    // includes the final end action
};

/// One ancestral rollout of `policy` using its own generator.
inline Plan rollout(const PolicyTable& policy, const MdpSpec& mdp, int s_init, Rng& rng) {
  Plan p;
  p.states.push_back(s_init);
  for (int t = 0; t < policy.horizon(); ++t) {
    const int s = p.states.back();
    double u = rng.uniform();
    int a = kEndAction;
    // Cumulative search over the row; the end action absorbs rounding slack.
    for (int k = 0; k < kNumActions; ++k) {
      const double q = policy.prob(t, s, k);
      if (q <= 0.0) continue;
      if (u < q) {
        a = k;
        break;
      }
      u -= q;
    }
    if (a != kEndAction && mdp.next(s, a) < 0) a = kEndAction;
    p.log_prob += policy.log_prob(t, s, a);
    if (a == kEndAction) break;
    p.states.push_back(mdp.next(s, a));
  }
  return p;
}

/// L independent rollouts; plan i draws from derive_seed(seed, i) only.
inline std::vector<Plan> sample_plans(const PolicyTable& policy, const MdpSpec& mdp, int s_init, int L,
                                      std::uint64_t seed) {
  require(L >= 0, "sample_plans: L must be non-negative");
  require(s_init >= 0 && s_init < mdp.num_states(), "sample_plans: s_init out of range");
  std::vector<Plan> out;
  out.reserve(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(rollout(policy, mdp, s_init, rng));
  }
  return out;
}

/// Cell centres of the plan's states in the target frame.
inline std::vector<Vec2> plan_to_polyline(const Plan& plan, const GridSpec& grid) {
  std::vector<Vec2> out;
  out.reserve(plan.states.size());
  for (int s : plan.states) out.push_back(grid.center(s));
  return out;
}

inline double polyline_length(const std::vector<Vec2>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
  return len;
}

// ---------------------------------------------------------------------------
// State and plan embeddings
// ---------------------------------------------------------------------------

struct EmbeddingWidths {
  int feature = 16;
  int reward = 8;
  int coord = 8;
  int total() const { return feature + reward + coord; }
};

/// e(s) = [f1(coarse feature), f2(R), f3(grid coordinates)].
class StateEmbedder {
 public:
  StateEmbedder() = default;
  StateEmbedder(ParamStore& p, const std::string& name, int coarse_width, const EmbeddingWidths& w, Rng& rng)
      : widths_(w),
        f1_(p, name + ".f1", {coarse_width, w.feature, w.feature}, rng),
        f2_(p, name + ".f2", {1, w.reward, w.reward}, rng),
        f3_(p, name + ".f3", {2, w.coord, w.coord}, rng) {}

  struct Cache {
    Mlp::Cache f1, f2, f3;
  };

  const EmbeddingWidths& widths() const { return widths_; }

  /// Grid coordinates scaled to [-1, 1].
  static RowVector coordinates(int s, const GridSpec& grid) {
    const Cell c = grid.cell(s);
    const double h = 0.5 * (grid.side - 1);
    RowVector v(2);
    v << (c.col - h) / std::max(h, 1.0), (c.row - h) / std::max(h, 1.0);
    return v;
  }

  /// One embedding row per entry of `states`.
  Matrix forward(const ParamStore& p, const std::vector<int>& states, const Matrix& coarse, const Vector& R,
                 const GridSpec& grid, Cache* c = nullptr) const {
    const auto n = static_cast<Eigen::Index>(states.size());
    Matrix F(n, coarse.cols()), r(n, 1), xy(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int s = states[static_cast<std::size_t>(i)];
      require(s >= 0 && s < grid.size() && s < coarse.rows(), "state_embedding: state out of grid");
      F.row(i) = coarse.row(s);
      r(i, 0) = R(s);
      xy.row(i) = coordinates(s, grid);
    }
    Matrix out(n, widths_.total());
    out.leftCols(widths_.feature) = f1_.forward(p, F, c ? &c->f1 : nullptr);
    out.middleCols(widths_.feature, widths_.reward) = f2_.forward(p, r, c ? &c->f2 : nullptr);
    out.rightCols(widths_.coord) = f3_.forward(p, xy, c ? &c->f3 : nullptr);
    return out;
  }

  /// Parameter gradients only; the inputs are frozen stage-1 outputs.
  void backward(const ParamStore& p, const Cache& c, const Matrix& dOut, GradientBuffer& g) const {
    f1_.backward(p, c.f1, dOut.leftCols(widths_.feature), g);
    f2_.backward(p, c.f2, dOut.middleCols(widths_.feature, widths_.reward), g);
    f3_.backward(p, c.f3, dOut.rightCols(widths_.coord), g);
  }

 private:
  EmbeddingWidths widths_;
  Mlp f1_, f2_, f3_;
};

/// [mean of rows, first row, last row].
inline RowVector plan_feature(const Matrix& embeddings) {
  require(embeddings.rows() > 0, "plan_feature: empty plan");
  const Eigen::Index w = embeddings.cols();
  RowVector out(3 * w);
  out.segment(0, w) = embeddings.colwise().mean();
  out.segment(w, w) = embeddings.row(0);
  out.segment(2 * w, w) = embeddings.row(embeddings.rows() - 1);
  return out;
}

inline Matrix plan_feature_backward(const RowVector& dFeature, Eigen::Index rows) {
  const Eigen::Index w = dFeature.size() / 3;
  Matrix d = dFeature.segment(0, w).replicate(rows, 1) / static_cast<double>(rows);
  d.row(0) += dFeature.segment(w, w);
  d.row(rows - 1) += dFeature.segment(2 * w, w);
  return d;
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

constexpr int kClusterPoints = 6;
constexpr int kMaxLloydIterations = 100;

/// Six evenly spaced points of a trajectory, flattened to 12 numbers.
inline RowVector cluster_vector(const Trajectory& traj) {
  const int m = static_cast<int>(traj.size());
  require(m >= 1, "cluster: empty trajectory");
  RowVector v(2 * kClusterPoints);
  for (int j = 0; j < kClusterPoints; ++j) {
    const int idx = std::max(0, (j + 1) * m / kClusterPoints - 1);
    v(2 * j) = traj[static_cast<std::size_t>(idx)].x;
    v(2 * j + 1) = traj[static_cast<std::size_t>(idx)].y;
  }
  return v;
}

struct Cluster {
  std::vector<int> members;  // indices into the input
  BezierCurve curve;         // fitted to the member mean
  Trajectory representative;
  double p_mcmc = 0.0;
};

struct ClusterResult {
  std::vector<Cluster> clusters;  // by decreasing size, then lowest member
  std::vector<int> assignment;    // cluster index per input trajectory
  std::vector<double> sse;        // within-cluster sum of squares per Lloyd step
  bool collapsed = false;         // fewer than K distinct inputs
  std::optional<std::string> warning;
};

/// K-means over cluster_vector() with farthest-point seeding. The first
/// centre is drawn from `seed`; later ones are the farthest remaining points.
inline ClusterResult cluster(const std::vector<Trajectory>& trajectories, int K, std::uint64_t seed,
                             int degree = kBezierDegree) {
  const int L = static_cast<int>(trajectories.size());
  require(K >= 1, "cluster: K must be >= 1");
  require(L >= K, "cluster: need L >= K (L=" + std::to_string(L) + ", K=" + std::to_string(K) + ")");
  Matrix X(L, 2 * kClusterPoints);
  for (int i = 0; i < L; ++i) X.row(i) = cluster_vector(trajectories[static_cast<std::size_t>(i)]);

  // Seeding.
  Rng rng(derive_seed(seed, 3));
  std::vector<int> centers_idx{static_cast<int>(rng.index(static_cast<std::size_t>(L)))};
  Vector nearest = (X.rowwise() - X.row(centers_idx[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers_idx.size()) < K) {
    Eigen::Index far = 0;
    const double d = nearest.maxCoeff(&far);
    if (d <= 0.0) break;
    centers_idx.push_back(static_cast<int>(far));
    nearest = nearest.cwiseMin((X.rowwise() - X.row(far)).rowwise().squaredNorm());
  }
  const int k_eff = static_cast<int>(centers_idx.size());
  Matrix C(k_eff, X.cols());
  for (int k = 0; k < k_eff; ++k) C.row(k) = X.row(centers_idx[static_cast<std::size_t>(k)]);

  ClusterResult out;
  out.collapsed = k_eff < K;
  if (out.collapsed)
    out.warning = "only " + std::to_string(k_eff) + " distinct trajectories for K=" + std::to_string(K) +
                  "; duplicate clusters collapsed";

  std::vector<int> assign(static_cast<std::size_t>(L), -1);
  for (int it = 0; it < kMaxLloydIterations; ++it) {
    bool changed = false;
    double sse = 0.0;
    for (int i = 0; i < L; ++i) {
      int best = 0;
      double bd = kInf;
      for (int k = 0; k < k_eff; ++k) {
        const double d = (X.row(i) - C.row(k)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      sse += bd;
      changed = changed || assign[static_cast<std::size_t>(i)] != best;
      assign[static_cast<std::size_t>(i)] = best;
    }
    out.sse.push_back(sse);
    if (!changed) break;
    Matrix sum = Matrix::Zero(k_eff, X.cols());
    std::vector<int> count(static_cast<std::size_t>(k_eff), 0);
    for (int i = 0; i < L; ++i) {
      sum.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int k = 0; k < k_eff; ++k)
      if (count[static_cast<std::size_t>(k)] > 0) C.row(k) = sum.row(k) / count[static_cast<std::size_t>(k)];
  }

  std::vector<Cluster> raw(static_cast<std::size_t>(k_eff));
  for (int i = 0; i < L; ++i) raw[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].members.push_back(i);
  std::vector<int> order;
  for (int k = 0; k < k_eff; ++k)
    if (!raw[static_cast<std::size_t>(k)].members.empty()) order.push_back(k);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ma = raw[static_cast<std::size_t>(a)].members;
    const auto& mb = raw[static_cast<std::size_t>(b)].members;
    return ma.size() != mb.size() ? ma.size() > mb.size() : ma.front() < mb.front();
  });
  std::vector<int> relabel(static_cast<std::size_t>(k_eff), -1);
  for (std::size_t r = 0; r < order.size(); ++r) {
    Cluster cl = std::move(raw[static_cast<std::size_t>(order[r])]);
    relabel[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
    const std::size_t m = trajectories[static_cast<std::size_t>(cl.members.front())].size();
    Trajectory mean(m);
    for (int i : cl.members) {
      const Trajectory& t = trajectories[static_cast<std::size_t>(i)];
      require(t.size() == m, "cluster: trajectories differ in length");
      for (std::size_t j = 0; j < m; ++j) mean[j] = mean[j] + t[j];
    }
    for (auto& p : mean) p = (1.0 / static_cast<double>(cl.members.size())) * p;
    cl.curve = fit_control_points(mean, degree).curve;
    cl.representative = sample_at_timestamps(cl.curve, static_cast<int>(m));
    cl.p_mcmc = static_cast<double>(cl.members.size()) / L;
    out.clusters.push_back(std::move(cl));
  }
  out.assignment.resize(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i)
    out.assignment[static_cast<std::size_t>(i)] = relabel[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
  return out;
}

/// The member whose cluster vector lies closest to the cluster mean.
inline int cluster_medoid(const ClusterResult& r, int k, const std::vector<Trajectory>& trajectories) {
  const Cluster& cl = r.clusters.at(static_cast<std::size_t>(k));
  RowVector mean = RowVector::Zero(2 * kClusterPoints);
  for (int i : cl.members) mean += cluster_vector(trajectories[static_cast<std::size_t>(i)]);
  mean /= static_cast<double>(cl.members.size());
  int best = cl.members.front();
  double bd = kInf;
  for (int i : cl.members) {
    const double d = (cluster_vector(trajectories[static_cast<std::size_t>(i)]) - mean).squaredNorm();
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace goirl
