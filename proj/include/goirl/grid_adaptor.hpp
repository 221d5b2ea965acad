#pragma once

#include <optional>
#include <vector>

#include "goirl/maxent_irl.hpp"
#include "goirl/nn.hpp"

namespace goirl {

/// Fine-grid features, one row per cell (row-major cell index).
struct FeatureGrid {
  GridSpec grid;
  Matrix features;                 // grid.size() × F
  std::vector<std::uint8_t> mask;  // cells holding a node feature
  std::vector<int> source;         // node index per cell, -1 when zero-padded
};

/// Each cell takes the feature of its nearest node when that node lies within
/// 1.0 m (lowest index on ties); all other cells are zero. When `gate` is
/// given, cells outside it are zero regardless of distance.
inline FeatureGrid assign_to_grid(const Matrix& C_D, const std::vector<Vec2>& node_pos, const GridSpec& grid,
                                  const std::vector<std::uint8_t>* gate = nullptr, double max_dist = 1.0) {
  require(static_cast<std::size_t>(C_D.rows()) == node_pos.size(), "assign_to_grid: feature rows != node count");
  if (gate) require(gate->size() == static_cast<std::size_t>(grid.size()), "assign_to_grid: gate size mismatch");
  FeatureGrid out;
  out.grid = grid;
  out.features = Matrix::Zero(grid.size(), C_D.cols());
  out.mask.assign(static_cast<std::size_t>(grid.size()), 0);
  out.source.assign(static_cast<std::size_t>(grid.size()), -1);
  std::vector<std::vector<int>> bucket(static_cast<std::size_t>(grid.size()));
  for (std::size_t n = 0; n < node_pos.size(); ++n)
    if (auto c = grid.locate(node_pos[n])) bucket[static_cast<std::size_t>(grid.index(*c))].push_back(static_cast<int>(n));
  const int reach = static_cast<int>(std::ceil(max_dist / grid.resolution)) + 1;
  for (int i = 0; i < grid.size(); ++i) {
    if (gate && !(*gate)[static_cast<std::size_t>(i)]) continue;
    const Cell c = grid.cell(i);
    const Vec2 p = grid.center(i);
    int best = -1;
    double bd = kInf;
    for (int dr = -reach; dr <= reach; ++dr)
      for (int dc = -reach; dc <= reach; ++dc) {
        const Cell q{c.row + dr, c.col + dc};
        if (!grid.contains(q)) continue;
        for (int n : bucket[static_cast<std::size_t>(grid.index(q))]) {
          const double d = distance(p, node_pos[static_cast<std::size_t>(n)]);
          if (d < bd || (d == bd && n < best)) {
            bd = d;
            best = n;
          }
        }
      }
    if (best >= 0 && bd <= max_dist + 1e-12) {
      out.features.row(i) = C_D.row(best);
      out.mask[static_cast<std::size_t>(i)] = 1;
      out.source[static_cast<std::size_t>(i)] = best;
    }
  }
  return out;
}

/// Gradient of assign_to_grid w.r.t. the node features.
inline Matrix assign_to_grid_backward(const FeatureGrid& fg, const Matrix& dGrid, Eigen::Index nodes) {
  Matrix d = Matrix::Zero(nodes, dGrid.cols());
  for (std::size_t i = 0; i < fg.source.size(); ++i)
    if (fg.source[i] >= 0) d.row(fg.source[i]) += dGrid.row(static_cast<Eigen::Index>(i));
  return d;
}

/// 2×2 average pooling of a row-major square grid of feature rows.
inline Matrix avg_pool_2x2(const Matrix& fine, int side) {
  require(side % 2 == 0, "avg_pool_2x2: side must be even");
  require(fine.rows() == static_cast<Eigen::Index>(side) * side, "avg_pool_2x2: row count != side^2");
  const int half = side / 2;
  Matrix out = Matrix::Zero(half * half, fine.cols());
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) out.row((r / 2) * half + c / 2) += 0.25 * fine.row(r * side + c);
  return out;
}

inline Matrix avg_pool_2x2_backward(const Matrix& dCoarse, int side) {
  const int half = side / 2;
  Matrix out(side * side, dCoarse.cols());
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) out.row(r * side + c) = 0.25 * dCoarse.row((r / 2) * half + c / 2);
  return out;
}

/// Pooling followed by a pointwise perceptron F_d -> F_c -> F_c.
struct Downsampler {
  Mlp mlp;
  Downsampler() = default;
  Downsampler(ParamStore& p, const std::string& name, int in, int out, Rng& rng) : mlp(p, name, {in, out, out}, rng) {}

  struct Cache {
    Mlp::Cache mlp;
    int side = 0;
  };

  Matrix forward(const ParamStore& p, const FeatureGrid& fine, Cache* c = nullptr) const {
    require(fine.grid.side % 2 == 0, "downsample: fine grid side must be even");
    if (c) c->side = fine.grid.side;
    return mlp.forward(p, avg_pool_2x2(fine.features, fine.grid.side), c ? &c->mlp : nullptr);
  }
  Matrix backward(const ParamStore& p, const Cache& c, const Matrix& dOut, GradientBuffer& g) const {
    return avg_pool_2x2_backward(mlp.backward(p, c.mlp, dOut, g), c.side);
  }
};

/// Per-cell perceptron to (R, R_g) with R = -r_min - softplus(x0).
struct RewardHead {
  Mlp mlp;
  RewardHead() = default;
  RewardHead(ParamStore& p, const std::string& name, int in, Rng& rng) : mlp(p, name, {in, 16, 2}, rng) {}

  struct Cache {
    Mlp::Cache mlp;
    Matrix raw;
  };

  RewardMaps forward(const ParamStore& p, const Matrix& coarse, Cache* c = nullptr) const {
    Matrix raw = mlp.forward(p, coarse, c ? &c->mlp : nullptr);
    if (!raw.allFinite()) {
      Eigen::Index bad = 0;
      for (; bad < raw.rows(); ++bad)
        if (!raw.row(bad).allFinite()) break;
      throw TrainingDivergence("reward head produced a non-finite value at coarse cell " + std::to_string(bad) +
                               " (input norm " + std::to_string(coarse.row(bad).norm()) + ")");
    }
    RewardMaps r{Vector(raw.rows()), Vector(raw.rows())};
    for (Eigen::Index s = 0; s < raw.rows(); ++s) {
      r.R(s) = -kRewardMargin - softplus(raw(s, 0));
      r.R_g(s) = raw(s, 1);
    }
    if (c) c->raw = std::move(raw);
    return r;
  }

  /// Takes gradients w.r.t. R and R_g; returns the gradient w.r.t. the coarse features.
  Matrix backward(const ParamStore& p, const Cache& c, const Vector& dR, const Vector& dRg, GradientBuffer& g) const {
    Matrix draw(c.raw.rows(), 2);
    for (Eigen::Index s = 0; s < c.raw.rows(); ++s) {
      draw(s, 0) = -sigmoid(c.raw(s, 0)) * dR(s);
      draw(s, 1) = dRg(s);
    }
    return mlp.backward(p, c.mlp, draw, g);
  }
};

}  // namespace goirl
