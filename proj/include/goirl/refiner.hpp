#pragma once

#include <optional>
#include <string>
#include <vector>

#include "goirl/bezier.hpp"
#include "goirl/feature_net.hpp"
#include "goirl/grid_adaptor.hpp"
#include "goirl/plan_sampler.hpp"

namespace goirl {

constexpr double kHingeMargin = 0.2;
constexpr double kLossAlpha = 1.0;  // L_reg^T
constexpr double kLossBeta = 1.0;   // L_reg^G
constexpr double kLossGamma = 3.0;  // L_cls

// ---------------------------------------------------------------------------
// Losses and probabilities
// ---------------------------------------------------------------------------

inline double huber(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double huber_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0); }

inline RowVector softmax(const RowVector& z) {
  const double m = z.maxCoeff();
  RowVector e = (z.array() - m).exp();
  return e / e.sum();
}

struct Fusion {
  RowVector P;
  std::optional<std::string> warning;
};

/// P(i) proportional to P_cls(i) * P_mcmc(i).
inline Fusion fuse_probabilities(const RowVector& P_cls, const RowVector& P_mcmc) {
  require(P_cls.size() == P_mcmc.size() && P_cls.size() > 0, "fuse_probabilities: length mismatch");
  require((P_cls.array() >= 0.0).all() && (P_mcmc.array() >= 0.0).all(), "fuse_probabilities: negative entry");
  Fusion out;
  // Uniform P_mcmc cancels exactly; skip the rounding of multiply-then-normalise.
  if ((P_mcmc.array() == P_mcmc(0)).all() && P_mcmc(0) > 0.0) {
    out.P = P_cls;
    return out;
  }
  const RowVector prod = P_cls.cwiseProduct(P_mcmc);
  const double z = prod.sum();
  if (!(z > 0.0)) {
    out.P = P_cls / P_cls.sum();
    out.warning = "all fused products are zero; falling back to P_cls";
    return out;
  }
  out.P = prod / z;
  return out;
}

/// argmin over modes of the endpoint distance; lowest index on ties.
inline int select_wta(const std::vector<Trajectory>& predictions, const Trajectory& gt) {
  require(!predictions.empty(), "select_wta: no predictions");
  require(!gt.empty(), "select_wta: empty ground truth");
  int best = 0;
  double bd = kInf;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    require(predictions[k].size() == gt.size(), "select_wta: length mismatch");
    const double d = distance(predictions[k].back(), gt.back());
    if (d < bd) {
      bd = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

/// Mean pointwise Huber of the displacement norm.
inline double trajectory_huber(const Trajectory& a, const Trajectory& gt) {
  require(a.size() == gt.size() && !gt.empty(), "trajectory_huber: length mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) s += huber(distance(a[t], gt[t]));
  return s / static_cast<double>(gt.size());
}

/// d huber(|a - b|) / d a.
inline Vec2 huber_norm_grad(Vec2 a, Vec2 b) {
  const Vec2 d = a - b;
  const double r = d.norm();
  return r > 0.0 ? (huber_grad(r) / r) * d : Vec2{};
}

inline double hinge_loss(const RowVector& P_cls, int k_star, double margin = kHingeMargin) {
  require(margin > 0.0, "hinge_loss: margin must be positive");
  require(k_star >= 0 && k_star < P_cls.size(), "hinge_loss: k* out of range");
  const Eigen::Index K = P_cls.size();
  if (K == 1) return 0.0;
  double s = 0.0;
  for (Eigen::Index k = 0; k < K; ++k)
    if (k != k_star) s += std::max(P_cls(k) - P_cls(k_star) + margin, 0.0);
  return s / static_cast<double>(K - 1);
}

inline RowVector hinge_loss_grad(const RowVector& P_cls, int k_star, double margin = kHingeMargin) {
  const Eigen::Index K = P_cls.size();
  RowVector d = RowVector::Zero(K);
  if (K == 1) return d;
  for (Eigen::Index k = 0; k < K; ++k)
    if (k != k_star && P_cls(k) - P_cls(k_star) + margin > 0.0) {
      d(k) += 1.0 / static_cast<double>(K - 1);
      d(k_star) -= 1.0 / static_cast<double>(K - 1);
    }
  return d;
}

struct RegressionLosses {
  double proposal = 0.0;    // L_reg^P
  double trajectory = 0.0;  // L_reg^T
  double goal = 0.0;        // L_reg^G
};

inline RegressionLosses regression_losses(const std::vector<Trajectory>& predictions,
                                          const std::vector<Trajectory>& proposals, const Trajectory& gt, int k_star) {
  require(k_star >= 0 && k_star < static_cast<int>(predictions.size()) &&
              k_star < static_cast<int>(proposals.size()),
          "regression_losses: k* out of range");
  const Trajectory& y = predictions[static_cast<std::size_t>(k_star)];
  RegressionLosses out;
  out.proposal = trajectory_huber(proposals[static_cast<std::size_t>(k_star)], gt);
  out.trajectory = trajectory_huber(y, gt);
  out.goal = huber(distance(y.back(), gt.back()));
  return out;
}

struct LossReport {
  double reg_proposal = 0.0;
  double reg_trajectory = 0.0;
  double reg_goal = 0.0;
  double cls = 0.0;
  double total = 0.0;
  int k_star = 0;
};

// ---------------------------------------------------------------------------
// Refiner network
// ---------------------------------------------------------------------------

struct RefinerWidths {
  int location = 32;
  int trunk = 64;
  EmbeddingWidths embedding;
  friend bool operator==(const RefinerWidths& a, const RefinerWidths& b) {
    return a.location == b.location && a.trunk == b.trunk && a.embedding.feature == b.embedding.feature &&
           a.embedding.reward == b.embedding.reward && a.embedding.coord == b.embedding.coord;
  }
};

/// Everything the refiner reads from one scene; all of it is frozen stage-1 output.
struct RefinerScene {
  std::vector<Vec2> history;             // target track, target frame, oldest first
  const FeatureGrid* fine = nullptr;     // fine-grid features
  RowVector h0;                          // target agent feature
  const Matrix* coarse = nullptr;        // coarse features for state embeddings
  const Vector* reward = nullptr;        // transient reward R
  GridSpec coarse_grid = default_coarse_grid();
  std::vector<Trajectory> proposals;     // K representative trajectories
  std::vector<std::vector<int>> plans;   // representative plan per mode
  RowVector p_mcmc;
};

/// Global average of the fine-grid features under each point; points outside
/// the grid count as zero.
inline RowVector pool_fine_features(const std::vector<Vec2>& points, const FeatureGrid& fine) {
  RowVector s = RowVector::Zero(fine.features.cols());
  if (points.empty()) return s;
  for (Vec2 p : points)
    if (auto c = fine.grid.locate(p)) s += fine.features.row(fine.grid.index(*c));
  return s / static_cast<double>(points.size());
}

struct RefinedPrediction {
  std::vector<Trajectory> trajectories;  // Y = proposal + offset
  Matrix offsets;                        // K × 2 t_f
  RowVector logits;
  RowVector P_cls;
  RowVector P;
  std::optional<std::string> warning;
};

class Refiner {
 public:
  Refiner() = default;
  Refiner(const Widths& context, const RefinerWidths& w = {}, int t_p = kHistorySteps, int t_f = kFutureSteps,
          std::uint64_t seed = 0)
      : context_(context), widths_(w), t_p_(t_p), t_f_(t_f) {
    Rng rng(derive_seed(seed, 4));
    embed_ = StateEmbedder(params_, "embed", context.coarse, w.embedding, rng);
    location_ = Mlp(params_, "location", {2 * (t_p + t_f), w.location, w.location}, rng);
    const int in = context.drivable + context.agent + w.location;
    input_ = Linear(params_, "trunk.in", in, w.trunk, rng);
    for (int b = 0; b < 2; ++b) {
      blocks_[b][0] = Linear(params_, "trunk.res" + std::to_string(b) + ".a", w.trunk, w.trunk, rng);
      blocks_[b][1] = Linear(params_, "trunk.res" + std::to_string(b) + ".b", w.trunk, w.trunk, rng);
    }
    regression_ = Linear(params_, "head.reg", w.trunk, 2 * t_f, rng);
    classify_ = Linear(params_, "head.cls", w.trunk + 3 * w.embedding.total(), 1, rng);
    for (const auto* l : {&regression_, &classify_}) {
      params_.mutable_value(l->weight).setZero();
      params_.mutable_value(l->bias).setZero();
    }
  }

  const Widths& context_widths() const { return context_; }
  const RefinerWidths& widths() const { return widths_; }
  int t_p() const { return t_p_; }
  int t_f() const { return t_f_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Complete trajectory [history, proposal] flattened and scaled for the
  /// location perceptron.
  RowVector location_input(const std::vector<Vec2>& history, const Trajectory& proposal) const {
    require(static_cast<int>(history.size()) == t_p_ && static_cast<int>(proposal.size()) == t_f_,
            "refiner: trajectory lengths do not match t_p/t_f");
    RowVector v(2 * (t_p_ + t_f_));
    int i = 0;
    for (const auto* part : {&history, &proposal})
      for (Vec2 p : *part) {
        v(i++) = p.x / kLocationScale;
        v(i++) = p.y / kLocationScale;
      }
    return v;
  }

  /// [pooled fine features, h0, location embedding] for one complete trajectory.
  RowVector gather_fine_features(const std::vector<Vec2>& history, const Trajectory& proposal,
                                 const FeatureGrid& fine, const RowVector& h0, Mlp::Cache* c = nullptr) const {
    std::vector<Vec2> complete = history;
    complete.insert(complete.end(), proposal.begin(), proposal.end());
    RowVector out(fine.features.cols() + h0.size() + widths_.location);
    out << pool_fine_features(complete, fine), h0, location_.forward(params_, location_input(history, proposal), c);
    return out;
  }

  /// Parameter gradient of gather_fine_features; only the location block learns.
  void gather_fine_features_backward(const Mlp::Cache& c, const RowVector& dOut, GradientBuffer& g) const {
    location_.backward(params_, c, dOut.tail(widths_.location), g);
  }

  struct Cache {
    Matrix x;                      // trunk input, K rows
    Mlp::Cache location;
    Matrix in_pre;                 // pre-activation of the input layer
    Matrix h[3];                   // trunk activations after each stage
    Matrix block_pre[2];           // pre-activation inside each residual block
    Matrix cls_in;
    std::vector<StateEmbedder::Cache> embed;
    std::vector<Eigen::Index> plan_len;
  };

  RefinedPrediction forward(const RefinerScene& sc, Cache* c = nullptr) const {
    const auto K = static_cast<Eigen::Index>(sc.proposals.size());
    require(K > 0, "refine: no proposals");
    require(sc.plans.size() == sc.proposals.size() && sc.p_mcmc.size() == K, "refine: mode count mismatch");
    require(sc.fine && sc.coarse && sc.reward, "refine: scene features missing");
    const int Fd = static_cast<int>(sc.fine->features.cols());
    require(Fd == context_.drivable && sc.h0.size() == context_.agent, "refine: context widths mismatch");

    Matrix loc_in(K, 2 * (t_p_ + t_f_));
    Matrix x(K, Fd + context_.agent + widths_.location);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Trajectory& prop = sc.proposals[static_cast<std::size_t>(k)];
      loc_in.row(k) = location_input(sc.history, prop);
      std::vector<Vec2> complete = sc.history;
      complete.insert(complete.end(), prop.begin(), prop.end());
      x.row(k).head(Fd) = pool_fine_features(complete, *sc.fine);
      x.row(k).segment(Fd, context_.agent) = sc.h0;
    }
    x.rightCols(widths_.location) = location_.forward(params_, loc_in, c ? &c->location : nullptr);

    Matrix in_pre = input_.forward(params_, x);
    Matrix h = activate(in_pre, Activation::kRelu);
    if (c) {
      c->x = x;
      c->in_pre = in_pre;
      c->h[0] = h;
    }
    for (int b = 0; b < 2; ++b) {
      Matrix pre = blocks_[b][0].forward(params_, h);
      h = h + blocks_[b][1].forward(params_, activate(pre, Activation::kRelu));
      if (c) {
        c->block_pre[b] = std::move(pre);
        c->h[b + 1] = h;
      }
    }

    const int E = widths_.embedding.total();
    Matrix cls_in(K, widths_.trunk + 3 * E);
    cls_in.leftCols(widths_.trunk) = h;
    if (c) {
      c->embed.assign(static_cast<std::size_t>(K), {});
      c->plan_len.assign(static_cast<std::size_t>(K), 0);
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto& plan = sc.plans[static_cast<std::size_t>(k)];
      const Matrix e = embed_.forward(params_, plan, *sc.coarse, *sc.reward, sc.coarse_grid,
                                      c ? &c->embed[static_cast<std::size_t>(k)] : nullptr);
      cls_in.row(k).rightCols(3 * E) = plan_feature(e);
      if (c) c->plan_len[static_cast<std::size_t>(k)] = e.rows();
    }

    RefinedPrediction out;
    out.offsets = regression_.forward(params_, h);
    out.logits = classify_.forward(params_, cls_in).col(0).transpose();
    out.P_cls = softmax(out.logits);
    Fusion f = fuse_probabilities(out.P_cls, sc.p_mcmc);
    out.P = std::move(f.P);
    out.warning = std::move(f.warning);
    for (Eigen::Index k = 0; k < K; ++k) {
      Trajectory y = sc.proposals[static_cast<std::size_t>(k)];
      for (int t = 0; t < t_f_; ++t) y[static_cast<std::size_t>(t)] = y[static_cast<std::size_t>(t)] + Vec2{out.offsets(k, 2 * t), out.offsets(k, 2 * t + 1)};
      out.trajectories.push_back(std::move(y));
    }
    if (c) c->cls_in = std::move(cls_in);
    return out;
  }

  /// Parameter gradients from dL/d offsets (K × 2 t_f) and dL/d logits.
  void backward(const RefinerScene& sc, const Cache& c, const Matrix& dOffsets, const RowVector& dLogits,
                GradientBuffer& g) const {
    Matrix dh = regression_.backward(params_, c.h[2], dOffsets, g);
    const Matrix dcls = classify_.backward(params_, c.cls_in, dLogits.transpose(), g);
    dh += dcls.leftCols(widths_.trunk);
    const int E = widths_.embedding.total();
    for (std::size_t k = 0; k < sc.plans.size(); ++k) {
      const Matrix de = plan_feature_backward(dcls.row(static_cast<Eigen::Index>(k)).rightCols(3 * E), c.plan_len[k]);
      embed_.backward(params_, c.embed[k], de, g);
    }
    for (int b = 1; b >= 0; --b) {
      const Matrix inner = activate(c.block_pre[b], Activation::kRelu);
      Matrix d = blocks_[b][1].backward(params_, inner, dh, g);
      d = activate_backward(c.block_pre[b], d, Activation::kRelu);
      dh += blocks_[b][0].backward(params_, c.h[b], d, g);
    }
    const Matrix dx = input_.backward(params_, c.x, activate_backward(c.in_pre, dh, Activation::kRelu), g);
    location_.backward(params_, c.location, dx.rightCols(widths_.location), g);
  }

  /// Weighted total loss and, when `g` is given, its parameter gradient.
  LossReport loss(const RefinerScene& sc, const Trajectory& gt, GradientBuffer* g = nullptr, double scale = 1.0) const {
    Cache cache;
    const RefinedPrediction pred = forward(sc, g ? &cache : nullptr);
    LossReport r;
    r.k_star = select_wta(pred.trajectories, gt);
    const RegressionLosses reg = regression_losses(pred.trajectories, sc.proposals, gt, r.k_star);
    r.reg_proposal = reg.proposal;
    r.reg_trajectory = reg.trajectory;
    r.reg_goal = reg.goal;
    r.cls = hinge_loss(pred.P_cls, r.k_star);
    r.total = r.reg_proposal + kLossAlpha * r.reg_trajectory + kLossBeta * r.reg_goal + kLossGamma * r.cls;
    if (g) {
      const auto K = static_cast<Eigen::Index>(sc.proposals.size());
      Matrix dOff = Matrix::Zero(K, 2 * t_f_);
      const Trajectory& y = pred.trajectories[static_cast<std::size_t>(r.k_star)];
      for (int t = 0; t < t_f_; ++t) {
        Vec2 d = (kLossAlpha / t_f_) * huber_norm_grad(y[static_cast<std::size_t>(t)], gt[static_cast<std::size_t>(t)]);
        if (t == t_f_ - 1) d = d + kLossBeta * huber_norm_grad(y.back(), gt.back());
        dOff(r.k_star, 2 * t) = scale * d.x;
        dOff(r.k_star, 2 * t + 1) = scale * d.y;
      }
      const RowVector dP = kLossGamma * hinge_loss_grad(pred.P_cls, r.k_star);
      const RowVector dz = pred.P_cls.cwiseProduct((dP.array() - dP.dot(pred.P_cls)).matrix());
      backward(sc, cache, dOff, scale * dz, *g);
    }
    return r;
  }

  static constexpr double kLocationScale = 25.0;

 private:
  Widths context_;
  RefinerWidths widths_;
  int t_p_ = kHistorySteps;
  int t_f_ = kFutureSteps;
  ParamStore params_;
  StateEmbedder embed_;
  Mlp location_;
  Linear input_;
  Linear blocks_[2][2];
  Linear regression_;
  Linear classify_;
};

}  // namespace goirl
