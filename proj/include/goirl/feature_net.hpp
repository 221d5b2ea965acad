#pragma once

#include <array>
#include <string>
#include <vector>

#include "goirl/nn.hpp"
#include "goirl/scene.hpp"

namespace goirl {

struct Widths {
  int lane = 32;      // F_l
  int agent = 32;     // F_a
  int drivable = 16;  // F_d
  int coarse = 16;    // F_c
  friend bool operator==(const Widths&, const Widths&) = default;
};

inline const std::vector<int>& lane_dilations() {
  static const std::vector<int> d{1, 2, 4, 8, 16, 32};
  return d;
}

constexpr int kDrivableInputs = 5;
constexpr int kAgentInputs = 4 * kHistorySteps;
constexpr double kFusionRadius = 10.0;

// ---------------------------------------------------------------------------
// Scene geometry shared by all encoders
// ---------------------------------------------------------------------------

/// Directed pairs (receiver, sender) of one adjacency relation.
using Relation = std::vector<std::pair<int, int>>;

/// Row-normalised sparse kernel: out_i = sum_j w_ij x_j.
struct SparseKernel {
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<std::pair<int, double>>> entries;

  Matrix apply(const Matrix& x) const {
    Matrix out = Matrix::Zero(rows, x.cols());
    for (int i = 0; i < rows; ++i)
      for (const auto& [j, w] : entries[static_cast<std::size_t>(i)]) out.row(i) += w * x.row(j);
    return out;
  }
  Matrix apply_transpose(const Matrix& y) const {
    Matrix out = Matrix::Zero(cols, y.cols());
    for (int i = 0; i < rows; ++i)
      for (const auto& [j, w] : entries[static_cast<std::size_t>(i)]) out.row(j) += w * y.row(i);
    return out;
  }
};

/// Distance-gated weights kappa = max(0, 1 - d / radius), normalised by max(sum kappa, 1).
inline SparseKernel distance_kernel(const std::vector<Vec2>& receivers, const std::vector<Vec2>& senders,
                                    double radius = kFusionRadius) {
  SparseKernel k;
  k.rows = static_cast<int>(receivers.size());
  k.cols = static_cast<int>(senders.size());
  k.entries.resize(receivers.size());
  for (std::size_t i = 0; i < receivers.size(); ++i) {
    double total = 0.0;
    auto& row = k.entries[i];
    for (std::size_t j = 0; j < senders.size(); ++j) {
      const double w = 1.0 - distance(receivers[i], senders[j]) / radius;
      if (w > 0.0) {
        row.emplace_back(static_cast<int>(j), w);
        total += w;
      }
    }
    const double norm = std::max(total, 1.0);
    for (auto& e : row) e.second /= norm;
  }
  return k;
}

struct LaneGraph {
  std::vector<Vec2> pos;   // v_i: segment midpoints
  std::vector<Vec2> disp;  // delta v_i: segment vectors
  std::vector<Relation> pre;  // one per dilation
  std::vector<Relation> suc;
  Relation left;
  Relation right;
  std::size_t size() const { return pos.size(); }
};

/// Lane nodes at centerline segment midpoints with pre/suc/left/right
/// adjacency; the dilated relations hold exact k-hop reachability.
inline LaneGraph build_lane_graph(const std::vector<LaneSegment>& lanes, std::vector<std::string>* warnings = nullptr,
                                  double crop = 40.0) {
  LaneGraph g;
  std::vector<std::vector<int>> lane_nodes(lanes.size());
  for (std::size_t li = 0; li < lanes.size(); ++li) {
    const auto& cl = lanes[li].centerline;
    if (cl.size() < 2) {
      if (warnings) warnings->push_back("lane " + std::to_string(lanes[li].id) + " skipped: fewer than 2 points");
      continue;
    }
    for (std::size_t k = 0; k + 1 < cl.size(); ++k) {
      const Vec2 mid = 0.5 * (cl[k] + cl[k + 1]);
      if (std::abs(mid.x) > crop || std::abs(mid.y) > crop) continue;
      lane_nodes[li].push_back(static_cast<int>(g.pos.size()));
      g.pos.push_back(mid);
      g.disp.push_back(cl[k + 1] - cl[k]);
    }
  }
  auto lane_index = [&](int id) -> int {
    for (std::size_t li = 0; li < lanes.size(); ++li)
      if (lanes[li].id == id) return static_cast<int>(li);
    return -1;
  };
  const int N = static_cast<int>(g.size());
  std::vector<std::vector<int>> succ(static_cast<std::size_t>(N));
  for (std::size_t li = 0; li < lanes.size(); ++li) {
    const auto& nodes = lane_nodes[li];
    if (nodes.empty()) continue;
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) succ[static_cast<std::size_t>(nodes[k])].push_back(nodes[k + 1]);
    for (int sid : lanes[li].suc) {
      const int lj = lane_index(sid);
      if (lj >= 0 && !lane_nodes[static_cast<std::size_t>(lj)].empty())
        succ[static_cast<std::size_t>(nodes.back())].push_back(lane_nodes[static_cast<std::size_t>(lj)].front());
    }
    auto nearest_in = [&](int lane_id, int node) {
      const int lj = lane_index(lane_id);
      int best = -1;
      double bd = kInf;
      if (lj < 0) return best;
      for (int m : lane_nodes[static_cast<std::size_t>(lj)]) {
        const double d = distance(g.pos[static_cast<std::size_t>(node)], g.pos[static_cast<std::size_t>(m)]);
        if (d < bd) {
          bd = d;
          best = m;
        }
      }
      return best;
    };
    for (int n : nodes) {
      if (lanes[li].left)
        if (int m = nearest_in(*lanes[li].left, n); m >= 0) g.left.emplace_back(n, m);
      if (lanes[li].right)
        if (int m = nearest_in(*lanes[li].right, n); m >= 0) g.right.emplace_back(n, m);
    }
  }
  for (auto& s : succ) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  // reach[i] = nodes reachable from i by walks of exactly `hops` suc steps.
  std::vector<std::vector<int>> reach(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) reach[static_cast<std::size_t>(i)] = {i};
  int hops = 0;
  for (int d : lane_dilations()) {
    while (hops < d) {
      for (auto& r : reach) {
        std::vector<int> next;
        for (int j : r) next.insert(next.end(), succ[static_cast<std::size_t>(j)].begin(), succ[static_cast<std::size_t>(j)].end());
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end()), next.end());
        r.swap(next);
      }
      ++hops;
    }
    Relation suc, pre;
    for (int i = 0; i < N; ++i)
      for (int j : reach[static_cast<std::size_t>(i)]) {
        suc.emplace_back(i, j);  // i receives from its successor j
        pre.emplace_back(j, i);  // j receives from its predecessor i
      }
    std::sort(pre.begin(), pre.end());
    g.suc.push_back(std::move(suc));
    g.pre.push_back(std::move(pre));
  }
  return g;
}

struct DrivableNodes {
  std::vector<int> cells;  // fine-grid indices
  std::vector<Vec2> pos;
  Matrix raw;              // N_d × kDrivableInputs
  std::vector<std::vector<int>> neighbors;  // sorted node indices
  std::size_t size() const { return cells.size(); }
};

/// Offsets of the eight-neighbour dilated stencil used by the drivable encoder.
inline std::vector<Cell> drivable_stencil() {
  std::vector<Cell> out;
  for (int d : {1, 2, 4})
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc)
        if (dr != 0 || dc != 0) out.push_back({dr * d, dc * d});
  return out;
}

/// Nodes at the centres of `mask` cells, with raw inputs
/// [x/25, y/25, min(lane distance, 10)/5, cos, sin of the nearest lane heading].
inline DrivableNodes build_drivable_nodes(const std::vector<std::uint8_t>& mask, const GridSpec& grid,
                                          const LaneGraph& lanes) {
  DrivableNodes d;
  std::vector<int> node_of(static_cast<std::size_t>(grid.size()), -1);
  for (int i = 0; i < grid.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    node_of[static_cast<std::size_t>(i)] = static_cast<int>(d.cells.size());
    d.cells.push_back(i);
    d.pos.push_back(grid.center(i));
  }
  const int N = static_cast<int>(d.size());
  d.raw = Matrix::Zero(N, kDrivableInputs);
  for (int n = 0; n < N; ++n) {
    const Vec2 p = d.pos[static_cast<std::size_t>(n)];
    double best = kInf;
    Vec2 heading{0.0, 0.0};
    for (std::size_t k = 0; k < lanes.size(); ++k) {
      const double dist = distance(p, lanes.pos[k]);
      if (dist < best) {
        best = dist;
        const double len = lanes.disp[k].norm();
        heading = len > 0.0 ? (1.0 / len) * lanes.disp[k] : Vec2{};
      }
    }
    d.raw(n, 0) = p.x / 25.0;
    d.raw(n, 1) = p.y / 25.0;
    d.raw(n, 2) = std::min(best, 10.0) / 5.0;
    d.raw(n, 3) = heading.x;
    d.raw(n, 4) = heading.y;
  }
  const auto stencil = drivable_stencil();
  d.neighbors.resize(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const Cell c = grid.cell(d.cells[static_cast<std::size_t>(n)]);
    auto& nb = d.neighbors[static_cast<std::size_t>(n)];
    for (const Cell& o : stencil) {
      const Cell q{c.row + o.row, c.col + o.col};
      if (grid.contains(q))
        if (int m = node_of[static_cast<std::size_t>(grid.index(q))]; m >= 0) nb.push_back(m);
    }
    std::sort(nb.begin(), nb.end());
  }
  return d;
}

struct AgentInputs {
  Matrix raw;                 // N_a × kAgentInputs, row 0 = target
  std::vector<Vec2> pos;      // last valid position
  std::vector<bool> all_invalid;
  std::vector<int> ids;
  std::size_t size() const { return ids.size(); }
};

/// Per step (dx, dy, speed/10, valid); steps without a valid predecessor
/// contribute zero motion.
inline AgentInputs build_agent_inputs(const Scenario& s) {
  AgentInputs a;
  std::vector<std::size_t> order{target_index(s)};
  for (std::size_t i = 0; i < s.agents.size(); ++i)
    if (i != order.front()) order.push_back(i);
  a.raw = Matrix::Zero(static_cast<Eigen::Index>(order.size()), kAgentInputs);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& track = s.agents[order[r]].track;
    require(static_cast<int>(track.size()) == kHistorySteps, "agent track length must equal t_p");
    bool any = false;
    Vec2 last{};
    for (int k = 0; k < kHistorySteps; ++k) {
      const auto& cur = track[static_cast<std::size_t>(k)];
      if (!cur.valid) continue;
      any = true;
      last = {cur.x, cur.y};
      a.raw(static_cast<Eigen::Index>(r), 4 * k + 3) = 1.0;
      if (k > 0 && track[static_cast<std::size_t>(k - 1)].valid) {
        const double dx = cur.x - track[static_cast<std::size_t>(k - 1)].x;
        const double dy = cur.y - track[static_cast<std::size_t>(k - 1)].y;
        a.raw(static_cast<Eigen::Index>(r), 4 * k) = dx;
        a.raw(static_cast<Eigen::Index>(r), 4 * k + 1) = dy;
        a.raw(static_cast<Eigen::Index>(r), 4 * k + 2) = std::hypot(dx, dy) / kStepSeconds / 10.0;
      }
    }
    a.pos.push_back(last);
    a.all_invalid.push_back(!any);
    a.ids.push_back(s.agents[order[r]].id);
  }
  return a;
}

/// All encoder inputs of one normalised scenario.
struct SceneGraph {
  LaneGraph lanes;
  DrivableNodes drivable;
  AgentInputs agents;
  SparseKernel a2l, l2d, l2a, a2a;
  std::vector<std::string> warnings;
};

inline SceneGraph build_scene_graph(const Scenario& normalized) {
  SceneGraph g;
  g.lanes = build_lane_graph(normalized.lanes, &g.warnings);
  g.drivable = build_drivable_nodes(encoding_mask(normalized), normalized.fine_grid(), g.lanes);
  g.agents = build_agent_inputs(normalized);
  std::vector<Vec2> agent_pos;
  for (std::size_t i = 0; i < g.agents.size(); ++i)
    agent_pos.push_back(g.agents.all_invalid[i] ? Vec2{1e9, 1e9} : g.agents.pos[i]);
  for (std::size_t i = 0; i < g.agents.size(); ++i)
    if (g.agents.all_invalid[i]) g.warnings.push_back("agent " + std::to_string(g.agents.ids[i]) + " has no valid samples");
  g.a2l = distance_kernel(g.lanes.pos, agent_pos);
  g.l2d = distance_kernel(g.drivable.pos, g.lanes.pos);
  g.l2a = distance_kernel(agent_pos, g.lanes.pos);
  g.a2a = distance_kernel(agent_pos, agent_pos);
  return g;
}

// ---------------------------------------------------------------------------
// Lane encoder: u_i = psi1(delta v_i) + psi2(v_i)
// ---------------------------------------------------------------------------

struct LaneEncoder {
  Mlp psi1, psi2;
  double position_scale = 0.1;

  LaneEncoder() = default;
  LaneEncoder(ParamStore& p, const std::string& name, int width, Rng& rng, double scale = 0.1)
      : psi1(p, name + ".psi1", {2, width, width}, rng), psi2(p, name + ".psi2", {2, width, width}, rng),
        position_scale(scale) {}

  struct Cache {
    Mlp::Cache c1, c2;
  };

  static Matrix stack(const std::vector<Vec2>& v, double scale) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 2);
    for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) << scale * v[i].x, scale * v[i].y;
    return m;
  }

  Matrix forward(const ParamStore& p, const LaneGraph& g, Cache* c = nullptr) const {
    if (g.size() == 0) return Matrix::Zero(0, psi1.out_dim());
    return psi1.forward(p, stack(g.disp, 1.0), c ? &c->c1 : nullptr) +
           psi2.forward(p, stack(g.pos, position_scale), c ? &c->c2 : nullptr);
  }
  void backward(const ParamStore& p, const Cache& c, const Matrix& dU, GradientBuffer& g) const {
    if (dU.rows() == 0) return;
    psi1.backward(p, c.c1, dU, g);
    psi2.backward(p, c.c2, dU, g);
  }
};

inline Matrix encode_lane_nodes(const ParamStore& p, const LaneEncoder& enc, const LaneGraph& g) {
  return enc.forward(p, g);
}

// ---------------------------------------------------------------------------
// Multi-scale dilated LaneConv
// ---------------------------------------------------------------------------

struct LaneConv {
  std::string name;
  int width = 0;
  Activation act = Activation::kRelu;

  LaneConv() = default;
  LaneConv(ParamStore& p, const std::string& n, int w, Rng& rng, Activation a = Activation::kRelu)
      : name(n), width(w), act(a) {
    const double scale = std::sqrt(6.0 / (2.0 * w)) / 2.0;
    for (int d : lane_dilations()) {
      p.add(pre_name(d), w, w, scale, rng);
      p.add(suc_name(d), w, w, scale, rng);
    }
    p.add(name + ".left", w, w, scale, rng);
    p.add(name + ".right", w, w, scale, rng);
    p.add(name + ".self", w, w, std::sqrt(6.0 / (2.0 * w)), rng);
    p.add(name + ".bias", 1, w, 0.0, rng);
  }

  std::string pre_name(int d) const { return name + ".pre" + std::to_string(d); }
  std::string suc_name(int d) const { return name + ".suc" + std::to_string(d); }

  struct Cache {
    std::vector<Matrix> gathered;  // A_r U per relation, in relation order
    Matrix U, pre;
  };

  /// Relations in a fixed order with their parameter names.
  std::vector<std::pair<const Relation*, std::string>> relations(const LaneGraph& g) const {
    std::vector<std::pair<const Relation*, std::string>> out;
    const auto& dil = lane_dilations();
    for (std::size_t k = 0; k < dil.size(); ++k) {
      out.emplace_back(&g.pre[k], pre_name(dil[k]));
      out.emplace_back(&g.suc[k], suc_name(dil[k]));
    }
    out.emplace_back(&g.left, name + ".left");
    out.emplace_back(&g.right, name + ".right");
    return out;
  }

  static Matrix gather(const Relation& r, const Matrix& U) {
    Matrix m = Matrix::Zero(U.rows(), U.cols());
    for (const auto& [i, j] : r) m.row(i) += U.row(j);
    return m;
  }
  static Matrix scatter(const Relation& r, const Matrix& dM) {
    Matrix d = Matrix::Zero(dM.rows(), dM.cols());
    for (const auto& [i, j] : r) d.row(j) += dM.row(i);
    return d;
  }

  Matrix forward(const ParamStore& p, const LaneGraph& g, const Matrix& U, Cache* c = nullptr) const {
    require(U.cols() == width, "lane_conv: feature width " + std::to_string(U.cols()) + " != " + std::to_string(width));
    require(static_cast<std::size_t>(U.rows()) == g.size(), "lane_conv: node count does not match the lane graph");
    Matrix z = U * p.value(name + ".self");
    z.rowwise() += p.value(name + ".bias").row(0);
    if (c) c->gathered.clear();
    for (const auto& [rel, pname] : relations(g)) {
      Matrix m = gather(*rel, U);
      z.noalias() += m * p.value(pname);
      if (c) c->gathered.push_back(std::move(m));
    }
    if (c) {
      c->U = U;
      c->pre = z;
    }
    return activate(z, act);
  }

  Matrix backward(const ParamStore& p, const LaneGraph& g, const Cache& c, const Matrix& dOut, GradientBuffer& gb) const {
    const Matrix dz = activate_backward(c.pre, dOut, act);
    gb[name + ".self"].noalias() += c.U.transpose() * dz;
    gb[name + ".bias"] += dz.colwise().sum();
    Matrix dU = dz * p.value(name + ".self").transpose();
    std::size_t k = 0;
    for (const auto& [rel, pname] : relations(g)) {
      gb[pname].noalias() += c.gathered[k++].transpose() * dz;
      dU += scatter(*rel, dz * p.value(pname).transpose());
    }
    return dU;
  }
};

// ---------------------------------------------------------------------------
// PointDA drivable encoder
// ---------------------------------------------------------------------------

struct PointDA {
  Mlp shared;  // g(x_j), ReLU output
  Mlp fusion;  // f([pooled, x_i])

  PointDA() = default;
  PointDA(ParamStore& p, const std::string& name, int in, int width, Rng& rng)
      : shared(p, name + ".shared", {in, width, width}, rng, Activation::kRelu),
        fusion(p, name + ".fusion", {width + in, width, width}, rng) {}

  struct Cache {
    Mlp::Cache shared, fusion;
    std::vector<int> argmax;  // N × width, -1 when isolated
  };

  Matrix forward(const ParamStore& p, const DrivableNodes& d, const Matrix& X, Cache* c = nullptr) const {
    const auto N = X.rows();
    require(static_cast<std::size_t>(N) == d.size(), "encode_drivable: row count does not match node set");
    const Matrix G = shared.forward(p, X, c ? &c->shared : nullptr);
    const auto W = G.cols();
    Matrix cat(N, W + X.cols());
    if (c) c->argmax.assign(static_cast<std::size_t>(N * W), -1);
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto& nb = d.neighbors[static_cast<std::size_t>(i)];
      for (Eigen::Index f = 0; f < W; ++f) {
        double best = 0.0;
        int arg = -1;
        for (int j : nb)
          if (arg < 0 || G(j, f) > best) {
            best = G(j, f);
            arg = j;
          }
        cat(i, f) = best;
        if (c) c->argmax[static_cast<std::size_t>(i * W + f)] = arg;
      }
    }
    cat.rightCols(X.cols()) = X;
    return fusion.forward(p, cat, c ? &c->fusion : nullptr);
  }

  Matrix backward(const ParamStore& p, const Cache& c, const Matrix& dOut, GradientBuffer& g) const {
    const Matrix dcat = fusion.backward(p, c.fusion, dOut, g);
    const auto N = dOut.rows();
    const auto W = shared.out_dim();
    Matrix dG = Matrix::Zero(N, W);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index f = 0; f < W; ++f)
        if (int j = c.argmax[static_cast<std::size_t>(i * W + f)]; j >= 0) dG(j, f) += dcat(i, f);
    Matrix dX = dcat.rightCols(dcat.cols() - W);
    dX += shared.backward(p, c.shared, dG, g);
    return dX;
  }
};

// ---------------------------------------------------------------------------
// Agent history encoder
// ---------------------------------------------------------------------------

struct AgentEncoder {
  Mlp mlp;
  AgentEncoder() = default;
  AgentEncoder(ParamStore& p, const std::string& name, int width, Rng& rng)
      : mlp(p, name, {kAgentInputs, 64, width}, rng) {}

  Matrix forward(const ParamStore& p, const AgentInputs& a, Mlp::Cache* c = nullptr) const {
    Matrix out = mlp.forward(p, a.raw, c);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.all_invalid[i]) out.row(static_cast<Eigen::Index>(i)).setZero();
    return out;
  }
  Matrix backward(const ParamStore& p, const AgentInputs& a, const Mlp::Cache& c, const Matrix& dOut,
                  GradientBuffer& g) const {
    Matrix d = dOut;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.all_invalid[i]) d.row(static_cast<Eigen::Index>(i)).setZero();
    return mlp.backward(p, c, d, g);
  }
};

// ---------------------------------------------------------------------------
// Fusion rounds
// ---------------------------------------------------------------------------

/// Gated cross-set message passing:
/// X' = X + relu((K S) W_m + X W_q + b) W_g.
struct CrossRound {
  std::string name;
  CrossRound() = default;
  CrossRound(ParamStore& p, const std::string& n, int send, int recv, Rng& rng) : name(n) {
    p.add(n + ".msg", send, recv, std::sqrt(6.0 / (send + recv)), rng);
    p.add(n + ".query", recv, recv, std::sqrt(6.0 / (2.0 * recv)), rng);
    p.add(n + ".bias", 1, recv, 0.0, rng);
    p.add(n + ".gate", recv, recv, 0.1 * std::sqrt(6.0 / (2.0 * recv)), rng);
  }

  struct Cache {
    Matrix M, X, Z, H;
  };

  Matrix forward(const ParamStore& p, const SparseKernel& k, const Matrix& S, const Matrix& X, Cache* c = nullptr) const {
    Matrix M = k.apply(S);
    Matrix Z = M * p.value(name + ".msg") + X * p.value(name + ".query");
    Z.rowwise() += p.value(name + ".bias").row(0);
    Matrix H = Z.cwiseMax(0.0);
    Matrix out = X + H * p.value(name + ".gate");
    if (c) *c = {std::move(M), X, std::move(Z), std::move(H)};
    return out;
  }

  /// Returns (dS, dX).
  std::pair<Matrix, Matrix> backward(const ParamStore& p, const SparseKernel& k, const Cache& c, const Matrix& dOut,
                                     GradientBuffer& g) const {
    g[name + ".gate"].noalias() += c.H.transpose() * dOut;
    const Matrix dH = dOut * p.value(name + ".gate").transpose();
    const Matrix dZ = (c.Z.array() > 0.0).select(dH, 0.0);
    g[name + ".msg"].noalias() += c.M.transpose() * dZ;
    g[name + ".query"].noalias() += c.X.transpose() * dZ;
    g[name + ".bias"] += dZ.colwise().sum();
    Matrix dX = dOut + dZ * p.value(name + ".query").transpose();
    Matrix dS = k.apply_transpose(dZ * p.value(name + ".msg").transpose());
    return {std::move(dS), std::move(dX)};
  }
};

struct FusedFeatures {
  Matrix C_A, C_L, C_D;
};

/// One round each of A2L, L2L, L2D, D2D, L2A, A2A. Without lanes only the
/// D2D and A2A rounds run.
struct FusionNet {
  CrossRound a2l, l2d, l2a, a2a;
  LaneConv l2l_conv;
  std::string l2l_gate;
  PointDA d2d;
  std::string d2d_gate;

  FusionNet() = default;
  FusionNet(ParamStore& p, const std::string& name, const Widths& w, Rng& rng)
      : a2l(p, name + ".a2l", w.agent, w.lane, rng),
        l2d(p, name + ".l2d", w.lane, w.drivable, rng),
        l2a(p, name + ".l2a", w.lane, w.agent, rng),
        a2a(p, name + ".a2a", w.agent, w.agent, rng),
        l2l_conv(p, name + ".l2l", w.lane, rng),
        l2l_gate(name + ".l2l.gate"),
        d2d(p, name + ".d2d", w.drivable, w.drivable, rng),
        d2d_gate(name + ".d2d.gate") {
    p.add(l2l_gate, w.lane, w.lane, 0.1 * std::sqrt(3.0 / w.lane), rng);
    p.add(d2d_gate, w.drivable, w.drivable, 0.1 * std::sqrt(3.0 / w.drivable), rng);
  }

  /// Names of every gate matrix (zeroing them makes fusion the identity).
  std::vector<std::string> gate_names() const {
    return {a2l.name + ".gate", l2d.name + ".gate", l2a.name + ".gate", a2a.name + ".gate", l2l_gate, d2d_gate};
  }

  struct Cache {
    bool lanes = false;
    CrossRound::Cache a2l, l2d, l2a, a2a;
    LaneConv::Cache l2l;
    Matrix l2l_out;
    PointDA::Cache d2d;
    Matrix d2d_out;
  };

  FusedFeatures forward(const ParamStore& p, const SceneGraph& g, FusedFeatures f, Cache* c = nullptr) const {
    const bool lanes = g.lanes.size() > 0;
    if (c) c->lanes = lanes;
    if (lanes) {
      f.C_L = a2l.forward(p, g.a2l, f.C_A, f.C_L, c ? &c->a2l : nullptr);
      Matrix conv = l2l_conv.forward(p, g.lanes, f.C_L, c ? &c->l2l : nullptr);
      f.C_L += conv * p.value(l2l_gate);
      if (c) c->l2l_out = std::move(conv);
      f.C_D = l2d.forward(p, g.l2d, f.C_L, f.C_D, c ? &c->l2d : nullptr);
    }
    if (f.C_D.rows() > 0) {
      Matrix pooled = d2d.forward(p, g.drivable, f.C_D, c ? &c->d2d : nullptr);
      f.C_D += pooled * p.value(d2d_gate);
      if (c) c->d2d_out = std::move(pooled);
    }
    if (lanes) f.C_A = l2a.forward(p, g.l2a, f.C_L, f.C_A, c ? &c->l2a : nullptr);
    f.C_A = a2a.forward(p, g.a2a, f.C_A, f.C_A, c ? &c->a2a : nullptr);
    return f;
  }

  /// Gradients w.r.t. the pre-fusion features, given gradients of the outputs.
  FusedFeatures backward(const ParamStore& p, const SceneGraph& g, const Cache& c, FusedFeatures d,
                         GradientBuffer& gb) const {
    {
      auto [dS, dX] = a2a.backward(p, g.a2a, c.a2a, d.C_A, gb);
      d.C_A = dS + dX;
    }
    if (c.lanes) {
      auto [dS, dX] = l2a.backward(p, g.l2a, c.l2a, d.C_A, gb);
      d.C_L += dS;
      d.C_A = std::move(dX);
    }
    if (d.C_D.rows() > 0) {
      gb[d2d_gate].noalias() += c.d2d_out.transpose() * d.C_D;
      d.C_D += d2d.backward(p, c.d2d, d.C_D * p.value(d2d_gate).transpose(), gb);
    }
    if (c.lanes) {
      {
        auto [dS, dX] = l2d.backward(p, g.l2d, c.l2d, d.C_D, gb);
        d.C_L += dS;
        d.C_D = std::move(dX);
      }
      gb[l2l_gate].noalias() += c.l2l_out.transpose() * d.C_L;
      d.C_L += l2l_conv.backward(p, g.lanes, c.l2l, d.C_L * p.value(l2l_gate).transpose(), gb);
      auto [dS, dX] = a2l.backward(p, g.a2l, c.a2l, d.C_L, gb);
      d.C_A += dS;
      d.C_L = std::move(dX);
    }
    return d;
  }
};

}  // namespace goirl
