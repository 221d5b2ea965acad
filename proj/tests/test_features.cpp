#include <gtest/gtest.h>

#include "goirl/context_model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace goirl;

namespace {

/// Small scene on a 10×10 grid: a two-segment lane chain with a left neighbour,
/// a drivable band and two agents.
Scenario tiny_scene() {
  Scenario s;
  s.id = "tiny";
  s.grid_side = 10;
  s.resolution_m = 1.0;
  s.lanes.push_back({1, {{-5.0, 0.0}, {-3.0, 0.2}, {-1.0, 0.0}}, {}, {2}, 3, {}});
  s.lanes.push_back({2, {{-1.0, 0.0}, {1.0, -0.3}, {3.0, 0.0}, {4.5, 0.4}}, {1}, {}, {}, {}});
  s.lanes.push_back({3, {{-5.0, 3.0}, {-2.0, 3.1}, {1.0, 3.0}}, {}, {}, {}, 1});
  s.drivable_mask.assign(100, 0);
  for (int r = 3; r < 9; ++r)
    for (int c = 0; c < 10; ++c)
      if ((r * 7 + c * 3) % 11 != 0) s.drivable_mask[static_cast<std::size_t>(r * 10 + c)] = 1;
  AgentTrack target{0, true, {}}, other{1, false, {}};
  for (int k = 0; k < kHistorySteps; ++k) {
    const int t = k - 19;
    target.track.push_back({t, 0.3 * t, 0.01 * t * t, true});
    other.track.push_back({t, 2.0 + 0.2 * t, 3.0, k >= 3});
  }
  s.agents = {target, other};
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Lane encoder
// ---------------------------------------------------------------------------

TEST(LaneEncoder, IdentityConfiguration) {
  ParamStore p;
  Rng rng(1);
  LaneEncoder enc;
  enc.psi1 = Mlp(p, "psi1", {2, 4}, rng);
  enc.psi2 = Mlp(p, "psi2", {2, 4}, rng);
  enc.position_scale = 1.0;
  for (const char* n : {"psi1.l0.w", "psi2.l0.w"}) {
    Matrix& w = p.mutable_value(n);
    w.setZero();
    w(0, 0) = w(1, 1) = 1.0;
  }
  const LaneGraph g = build_lane_graph(tiny_scene().lanes);
  const Matrix U = encode_lane_nodes(p, enc, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    EXPECT_DOUBLE_EQ(U(r, 0), g.disp[i].x + g.pos[i].x);
    EXPECT_DOUBLE_EQ(U(r, 1), g.disp[i].y + g.pos[i].y);
    EXPECT_EQ(U(r, 2), 0.0);
    EXPECT_EQ(U(r, 3), 0.0);
  }
}

TEST(LaneEncoder, ZeroParamsGiveZeroFeatures) {
  ParamStore p;
  Rng rng(2);
  LaneEncoder enc(p, "le", 8, rng);
  p.scale_all(0.0);
  const Matrix U = encode_lane_nodes(p, enc, build_lane_graph(tiny_scene().lanes));
  EXPECT_EQ(U.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LaneEncoder, SkipsShortLanesWithWarning) {
  auto lanes = tiny_scene().lanes;
  lanes.push_back({9, {{0.0, 0.0}}, {}, {}, {}, {}});
  std::vector<std::string> warnings;
  const LaneGraph g = build_lane_graph(lanes, &warnings);
  EXPECT_EQ(g.size(), 7u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("lane 9"), std::string::npos);
}

TEST(LaneEncoder, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(3);
  LaneEncoder enc(p, "le", 5, rng);
  jitter(p, 30);
  LaneGraph g;
  g.pos = {{0.7, -0.3}, {2.0, 0.5}, {4.0, 1.5}};
  g.disp = {{2.0, 0.5}, {2.0, 1.0}, {1.8, 1.2}};
  const Matrix W = random_matrix(3, 5, rng);
  LaneEncoder::Cache c;
  enc.forward(p, g, &c);
  GradientBuffer gb(p);
  enc.backward(p, c, W, gb);
  EXPECT_TRUE(grads_match(p, gb, [&] { return weighted(enc.forward(p, g), W); }, 1e-4));
}

// ---------------------------------------------------------------------------
// LaneConv
// ---------------------------------------------------------------------------

TEST(LaneConv, EmptyAdjacencyIdentityIsPassThrough) {
  ParamStore p;
  Rng rng(4);
  LaneConv conv(p, "lc", 3, rng, Activation::kLinear);
  p.mutable_value("lc.self") = Matrix::Identity(3, 3);
  LaneGraph g;
  g.pos.resize(4);
  g.disp.resize(4);
  g.pre.resize(6);
  g.suc.resize(6);
  const Matrix U = random_matrix(4, 3, rng);
  EXPECT_EQ(conv.forward(p, g, U), U);
}

TEST(LaneConv, SingleChainHandProduct) {
  ParamStore p;
  Rng rng(5);
  LaneConv conv(p, "lc", 2, rng, Activation::kLinear);
  for (auto& [name, t] : p.all_mutable()) t.value.setZero();
  p.mutable_value("lc.suc1") = (Matrix(2, 2) << 1.0, 2.0, 3.0, 4.0).finished();
  LaneGraph g;
  g.pos = {{0.0, 0.0}, {2.0, 0.0}};
  g.disp = g.pos;
  g.pre.assign(6, {});
  g.suc.assign(6, {});
  g.suc[0] = {{0, 1}};  // a receives from its successor b
  const Matrix U = (Matrix(2, 2) << 1.0, 1.0, 0.5, -1.0).finished();
  const Matrix out = conv.forward(p, g, U);
  // row(a) = U(b) Θ = [0.5, -1] [[1, 2], [3, 4]] = [-2.5, -3]
  EXPECT_DOUBLE_EQ(out(0, 0), -2.5);
  EXPECT_DOUBLE_EQ(out(0, 1), -3.0);
  EXPECT_EQ(out.row(1).cwiseAbs().sum(), 0.0);
}

TEST(LaneConv, DilatedReachabilityIsExactHops) {
  const LaneGraph g = build_lane_graph(tiny_scene().lanes);
  // Lane 1 has nodes 0,1; lane 2 nodes 2,3,4; lane 3 nodes 5,6.
  ASSERT_EQ(g.size(), 7u);
  const Relation& s1 = g.suc[0];
  const Relation& s2 = g.suc[1];
  EXPECT_NE(std::find(s1.begin(), s1.end(), std::pair{1, 2}), s1.end());
  EXPECT_NE(std::find(s2.begin(), s2.end(), std::pair{0, 2}), s2.end());
  EXPECT_EQ(std::find(s2.begin(), s2.end(), std::pair{0, 1}), s2.end());
  EXPECT_TRUE(g.suc[3].empty());  // no walk of 8 hops
  EXPECT_FALSE(g.left.empty());
  EXPECT_FALSE(g.right.empty());
}

TEST(LaneConv, DimensionMismatchIsContractViolation) {
  ParamStore p;
  Rng rng(6);
  LaneConv conv(p, "lc", 3, rng);
  const LaneGraph g = build_lane_graph(tiny_scene().lanes);
  EXPECT_THROW(conv.forward(p, g, Matrix::Zero(static_cast<Eigen::Index>(g.size()), 4)), ContractViolation);
}

TEST(LaneConv, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(7);
  LaneConv conv(p, "lc", 3, rng);
  jitter(p, 31);
  LaneGraph g;
  g.pos.resize(4);
  g.disp.resize(4);
  g.pre.assign(6, {});
  g.suc.assign(6, {});
  g.suc[0] = {{0, 1}, {1, 2}, {2, 3}};
  g.pre[0] = {{1, 0}, {2, 1}, {3, 2}};
  g.suc[1] = {{0, 2}, {1, 3}};
  g.pre[1] = {{2, 0}, {3, 1}};
  g.left = {{0, 3}};
  g.right = {{3, 0}};
  Matrix U = random_matrix(4, 3, rng);
  const Matrix W = random_matrix(4, 3, rng);
  LaneConv::Cache c;
  conv.forward(p, g, U, &c);
  GradientBuffer gb(p);
  const Matrix dU = conv.backward(p, g, c, W, gb);
  EXPECT_TRUE(grads_match(p, gb, [&] { return weighted(conv.forward(p, g, U), W); }, 1e-4));
  Vector flat = Eigen::Map<const Vector>(U.data(), U.size());
  const Vector fd = oracle::central_difference(
      [&](const Vector& x) {
        Matrix V = Eigen::Map<const Matrix>(x.data(), 4, 3);
        return weighted(conv.forward(p, g, V), W);
      },
      flat);
  for (Eigen::Index i = 0; i < fd.size(); ++i) EXPECT_LE(oracle::rel_err(dU.data()[i], fd(i)), 1e-4);
}

// ---------------------------------------------------------------------------
// PointDA drivable encoder
// ---------------------------------------------------------------------------

TEST(PointDA, EqualFeaturesMatchSingleNodePath) {
  ParamStore p;
  Rng rng(8);
  PointDA enc(p, "pd", 3, 6, rng);
  DrivableNodes d;
  d.cells = {0, 1, 2};
  d.pos.resize(3);
  d.neighbors = {{1, 2}, {0, 2}, {0, 1}};
  const RowVector x = random_matrix(1, 3, rng);
  Matrix X(3, 3);
  X << x, x, x;
  const Matrix out = enc.forward(p, d, X);
  // Single-node path: f([g(x), x]).
  Matrix cat(1, 9);
  cat << enc.shared.forward(p, x), x;
  const Matrix single = enc.fusion.forward(p, cat);
  for (int i = 0; i < 3; ++i)
    for (int f = 0; f < 6; ++f) EXPECT_NEAR(out(i, f), single(0, f), 1e-15);
}

TEST(PointDA, NeighborOrderDoesNotMatter) {
  ParamStore p;
  Rng rng(9);
  PointDA enc(p, "pd", 4, 5, rng);
  DrivableNodes d;
  d.cells = {0, 1, 2, 3, 4};
  d.pos.resize(5);
  d.neighbors = {{1, 2, 3}, {0, 4}, {0, 1, 3, 4}, {}, {2, 3}};
  const Matrix X = random_matrix(5, 4, rng);
  const Matrix a = enc.forward(p, d, X);
  for (auto& nb : d.neighbors) std::reverse(nb.begin(), nb.end());
  EXPECT_EQ(enc.forward(p, d, X), a);
}

TEST(PointDA, IsolatedNodePoolsZero) {
  ParamStore p;
  Rng rng(10);
  PointDA enc(p, "pd", 2, 4, rng);
  DrivableNodes d;
  d.cells = {0};
  d.pos.resize(1);
  d.neighbors = {{}};
  const Matrix X = random_matrix(1, 2, rng);
  Matrix cat = Matrix::Zero(1, 6);
  cat.rightCols(2) = X;
  EXPECT_EQ(enc.forward(p, d, X), enc.fusion.forward(p, cat));
}

TEST(PointDA, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(11);
  PointDA enc(p, "pd", 3, 4, rng);
  jitter(p, 32);
  DrivableNodes d;
  d.cells = {0, 1, 2, 3, 4, 5};
  d.pos.resize(6);
  d.neighbors = {{1, 2}, {0, 2, 3}, {0, 1, 4, 5}, {1, 4}, {2, 3, 5}, {}};
  const Matrix X = random_matrix(6, 3, rng);
  const Matrix W = random_matrix(6, 4, rng);
  PointDA::Cache c;
  enc.forward(p, d, X, &c);
  GradientBuffer gb(p);
  enc.backward(p, c, W, gb);
  EXPECT_TRUE(grads_match(p, gb, [&] { return weighted(enc.forward(p, d, X), W); }, 1e-4));
}

// ---------------------------------------------------------------------------
// Agent encoder
// ---------------------------------------------------------------------------

TEST(AgentEncoder, ZeroParamsAndIdenticalAgents) {
  ParamStore p;
  Rng rng(12);
  AgentEncoder enc(p, "ag", 8, rng);
  Scenario s = tiny_scene();
  s.agents[1] = s.agents[0];
  s.agents[1].is_target = false;
  const AgentInputs a = build_agent_inputs(s);
  const Matrix out = enc.forward(p, a);
  EXPECT_EQ(out.row(0), out.row(1));
  p.scale_all(0.0);
  EXPECT_EQ(enc.forward(p, a).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AgentEncoder, AllInvalidTrackIsZeroAndFlagged) {
  ParamStore p;
  Rng rng(13);
  AgentEncoder enc(p, "ag", 8, rng);
  Scenario s = tiny_scene();
  for (auto& t : s.agents[1].track) t.valid = false;
  const SceneGraph g = build_scene_graph(s);
  EXPECT_TRUE(g.agents.all_invalid[1]);
  EXPECT_EQ(enc.forward(p, g.agents).row(1).cwiseAbs().sum(), 0.0);
  EXPECT_FALSE(g.warnings.empty());
}

TEST(AgentEncoder, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(14);
  AgentEncoder enc(p, "ag", 6, rng);
  jitter(p, 33);
  const AgentInputs a = build_agent_inputs(tiny_scene());
  const Matrix W = random_matrix(2, 6, rng);
  Mlp::Cache c;
  enc.forward(p, a, &c);
  GradientBuffer gb(p);
  enc.backward(p, a, c, W, gb);
  EXPECT_TRUE(grads_match(p, gb, [&] { return weighted(enc.forward(p, a), W); }, 1e-4));
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

TEST(Fusion, ZeroGatesLeaveFeaturesUnchanged) {
  ParamStore p;
  Rng rng(15);
  const Widths w{6, 5, 4, 4};
  FusionNet net(p, "fu", w, rng);
  for (const auto& n : net.gate_names()) p.mutable_value(n).setZero();
  const SceneGraph g = build_scene_graph(tiny_scene());
  FusedFeatures f{random_matrix(2, 5, rng), random_matrix(static_cast<Eigen::Index>(g.lanes.size()), 6, rng),
                  random_matrix(static_cast<Eigen::Index>(g.drivable.size()), 4, rng)};
  const FusedFeatures out = net.forward(p, g, f);
  EXPECT_EQ(out.C_A, f.C_A);
  EXPECT_EQ(out.C_L, f.C_L);
  EXPECT_EQ(out.C_D, f.C_D);
}

TEST(Fusion, LoneAgentPassesThroughSelfRoundOnly) {
  ParamStore p;
  Rng rng(16);
  const Widths w{6, 5, 4, 4};
  FusionNet net(p, "fu", w, rng);
  Scenario s = tiny_scene();
  s.lanes.clear();
  s.agents.resize(1);
  std::fill(s.drivable_mask.begin(), s.drivable_mask.end(), 0);
  const SceneGraph g = build_scene_graph(s);
  FusedFeatures f{random_matrix(1, 5, rng), Matrix::Zero(0, 6), Matrix::Zero(0, 4)};
  const FusedFeatures out = net.forward(p, g, f);
  EXPECT_EQ(out.C_A, net.a2a.forward(p, g.a2a, f.C_A, f.C_A));
  p.mutable_value("fu.a2a.bias").setConstant(2.0);  // open the ReLU so the round is visible
  EXPECT_NE(net.forward(p, g, f).C_A, f.C_A);
}

TEST(Fusion, NoLanesRunsDrivableAndAgentRounds) {
  ParamStore p;
  Rng rng(17);
  const Widths w{6, 5, 4, 4};
  FusionNet net(p, "fu", w, rng);
  Scenario s = tiny_scene();
  s.lanes.clear();
  const SceneGraph g = build_scene_graph(s);
  FusedFeatures f{random_matrix(2, 5, rng), Matrix::Zero(0, 6),
                  random_matrix(static_cast<Eigen::Index>(g.drivable.size()), 4, rng)};
  const FusedFeatures out = net.forward(p, g, f);
  const Matrix d2d = f.C_D + net.d2d.forward(p, g.drivable, f.C_D) * p.value(net.d2d_gate);
  EXPECT_EQ(out.C_D, d2d);
  EXPECT_EQ(out.C_A, net.a2a.forward(p, g.a2a, f.C_A, f.C_A));
}

TEST(Fusion, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(18);
  const Widths w{4, 3, 3, 3};
  FusionNet net(p, "fu", w, rng);
  jitter(p, 35);
  for (const auto& n : net.gate_names()) p.mutable_value(n) *= 10.0;  // make every round matter
  const SceneGraph g = build_scene_graph(tiny_scene());
  const FusedFeatures f{random_matrix(2, 3, rng), random_matrix(static_cast<Eigen::Index>(g.lanes.size()), 4, rng),
                        random_matrix(static_cast<Eigen::Index>(g.drivable.size()), 3, rng)};
  const FusedFeatures W{random_matrix(2, 3, rng), random_matrix(static_cast<Eigen::Index>(g.lanes.size()), 4, rng),
                        random_matrix(static_cast<Eigen::Index>(g.drivable.size()), 3, rng)};
  auto loss = [&] {
    const FusedFeatures o = net.forward(p, g, f);
    return weighted(o.C_A, W.C_A) + weighted(o.C_L, W.C_L) + weighted(o.C_D, W.C_D);
  };
  FusionNet::Cache c;
  net.forward(p, g, f, &c);
  GradientBuffer gb(p);
  const FusedFeatures din = net.backward(p, g, c, W, gb);
  EXPECT_TRUE(grads_match(p, gb, loss, 1e-3));

  // Input gradients of the agent block.
  Vector flat = Eigen::Map<const Vector>(f.C_A.data(), f.C_A.size());
  const Vector fd = oracle::central_difference(
      [&](const Vector& x) {
        FusedFeatures g2 = f;
        g2.C_A = Eigen::Map<const Matrix>(x.data(), f.C_A.rows(), f.C_A.cols());
        const FusedFeatures o = net.forward(p, g, g2);
        return weighted(o.C_A, W.C_A) + weighted(o.C_L, W.C_L) + weighted(o.C_D, W.C_D);
      },
      flat);
  for (Eigen::Index i = 0; i < fd.size(); ++i) EXPECT_LE(oracle::rel_err(din.C_A.data()[i], fd(i)), 1e-3);
}

// ---------------------------------------------------------------------------
// Feature adaptor, downsampling, reward head
// ---------------------------------------------------------------------------

TEST(AssignToGrid, CoincidentAndDistantNodes) {
  const GridSpec grid{4, 1.0};
  const Matrix C = (Matrix(1, 2) << 1.0, 2.0).finished();
  const FeatureGrid fg = assign_to_grid(C, {grid.center(Cell{1, 1})}, grid);
  EXPECT_EQ(fg.features.row(grid.index(Cell{1, 1})), C.row(0));
  EXPECT_EQ(fg.features.row(grid.index(Cell{1, 2})), C.row(0));  // exactly 1.0 m
  EXPECT_EQ(fg.features.row(grid.index(Cell{2, 2})).cwiseAbs().sum(), 0.0);  // 1.41 m
  EXPECT_EQ(fg.source[static_cast<std::size_t>(grid.index(Cell{3, 3}))], -1);
}

TEST(AssignToGrid, ConstantFeaturesGiveConstantGrid) {
  const GridSpec grid{6, 1.0};
  std::vector<Vec2> pos;
  for (int i = 0; i < grid.size(); ++i) pos.push_back(grid.center(i));
  const Matrix C = Matrix::Constant(grid.size(), 3, 0.7);
  const FeatureGrid fg = assign_to_grid(C, pos, grid);
  EXPECT_EQ(fg.features, C);
}

TEST(AssignToGrid, GatedCellsAreZeroAndEditsAreLocal) {
  const GridSpec grid{12, 1.0};
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(grid.size()));
    for (auto& m : mask) m = rng.bernoulli(0.6);
    std::vector<Vec2> pos;
    for (int i = 0; i < grid.size(); ++i)
      if (mask[static_cast<std::size_t>(i)]) pos.push_back(grid.center(i));
    const Matrix C = random_matrix(static_cast<Eigen::Index>(pos.size()), 4, rng);
    const FeatureGrid fg = assign_to_grid(C, pos, grid, &mask);
    for (int i = 0; i < grid.size(); ++i)
      if (!mask[static_cast<std::size_t>(i)]) EXPECT_EQ(fg.features.row(i).cwiseAbs().sum(), 0.0);
    auto edited = mask;
    std::vector<int> closed;
    for (int i = 0; i < grid.size(); ++i)
      if (edited[static_cast<std::size_t>(i)] && rng.bernoulli(0.1)) {
        edited[static_cast<std::size_t>(i)] = 0;
        closed.push_back(i);
      }
    const FeatureGrid fe = assign_to_grid(C, pos, grid, &edited);
    for (int i = 0; i < grid.size(); ++i) {
      const bool was_closed = std::find(closed.begin(), closed.end(), i) != closed.end();
      if (was_closed)
        EXPECT_EQ(fe.features.row(i).cwiseAbs().sum(), 0.0);
      else
        EXPECT_EQ(fe.features.row(i), fg.features.row(i));
    }
  }
}

TEST(AssignToGrid, EmptyNodeSetGivesZeroGrid) {
  const FeatureGrid fg = assign_to_grid(Matrix::Zero(0, 3), {}, GridSpec{4, 1.0});
  EXPECT_EQ(fg.features.cwiseAbs().sum(), 0.0);
}

TEST(Downsample, PoolingCases) {
  const Matrix constant = Matrix::Constant(16, 2, 1.5);
  EXPECT_EQ(avg_pool_2x2(constant, 4), Matrix::Constant(4, 2, 1.5));
  Matrix one = Matrix::Zero(16, 1);
  one(5, 0) = 2.0;  // cell (1,1) belongs to coarse block (0,0)
  const Matrix pooled = avg_pool_2x2(one, 4);
  EXPECT_DOUBLE_EQ(pooled(0, 0), 0.5);
  EXPECT_EQ(pooled.bottomRows(3).cwiseAbs().sum(), 0.0);
  EXPECT_THROW(avg_pool_2x2(Matrix::Zero(9, 1), 3), ContractViolation);
}

TEST(Downsample, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(20);
  Downsampler ds(p, "ds", 3, 4, rng);
  jitter(p, 36);
  FeatureGrid fg;
  fg.grid = GridSpec{4, 1.0};
  fg.features = random_matrix(16, 3, rng);
  const Matrix W = random_matrix(4, 4, rng);
  Downsampler::Cache c;
  ds.forward(p, fg, &c);
  GradientBuffer gb(p);
  const Matrix dfine = ds.backward(p, c, W, gb);
  EXPECT_TRUE(grads_match(p, gb, [&] { return weighted(ds.forward(p, fg), W); }, 1e-4));
  Vector flat = Eigen::Map<const Vector>(fg.features.data(), fg.features.size());
  const Vector fd = oracle::central_difference(
      [&](const Vector& x) {
        FeatureGrid g2 = fg;
        g2.features = Eigen::Map<const Matrix>(x.data(), 16, 3);
        return weighted(ds.forward(p, g2), W);
      },
      flat);
  for (Eigen::Index i = 0; i < fd.size(); ++i) EXPECT_LE(oracle::rel_err(dfine.data()[i], fd(i)), 1e-4);
}

TEST(RewardHead, ZeroParamsAndRange) {
  ParamStore p;
  Rng rng(21);
  RewardHead head(p, "rh", 4, rng);
  const Matrix coarse = random_matrix(625, 4, rng, 5.0);
  const RewardMaps r = head.forward(p, coarse);
  EXPECT_LE(r.R.maxCoeff(), -kRewardMargin);
  p.scale_all(0.0);
  const RewardMaps z = head.forward(p, coarse);
  EXPECT_LE((z.R.array() + kRewardMargin + std::log(2.0)).abs().maxCoeff(), 1e-15);
  EXPECT_EQ(z.R_g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RewardHead, NonFiniteOutputIsDivergence) {
  ParamStore p;
  Rng rng(22);
  RewardHead head(p, "rh", 2, rng);
  Matrix coarse = Matrix::Zero(4, 2);
  coarse(2, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(head.forward(p, coarse), TrainingDivergence);
}

TEST(RewardHead, GradientMatchesFiniteDifferences) {
  ParamStore p;
  Rng rng(23);
  RewardHead head(p, "rh", 3, rng);
  jitter(p, 37);
  const Matrix coarse = random_matrix(9, 3, rng, 2.0);
  const Vector wR = random_matrix(9, 1, rng), wG = random_matrix(9, 1, rng);
  auto loss = [&] {
    const RewardMaps r = head.forward(p, coarse);
    return r.R.dot(wR) + r.R_g.dot(wG);
  };
  RewardHead::Cache c;
  head.forward(p, coarse, &c);
  GradientBuffer gb(p);
  head.backward(p, c, wR, wG, gb);
  EXPECT_TRUE(grads_match(p, gb, loss, 1e-4));
}

TEST(ContextModel, EndToEndGradientMatchesFiniteDifferences) {
  const Scenario s = tiny_scene();
  const SceneGraph g = build_scene_graph(s);
  ContextModel model(Widths{4, 3, 3, 3}, 5);
  jitter(model.params(), 38);
  Rng rng(24);
  const Vector wR = random_matrix(25, 1, rng), wG = random_matrix(25, 1, rng);
  auto loss = [&] {
    const Context ctx = model.forward(g, s.drivable_mask, s.fine_grid());
    return ctx.reward.R.dot(wR) + ctx.reward.R_g.dot(wG);
  };
  ContextModel::Cache c;
  const Context ctx = model.forward(g, s.drivable_mask, s.fine_grid(), &c);
  GradientBuffer gb(model.params());
  model.backward(g, ctx, c, wR, wG, gb);
  EXPECT_TRUE(grads_match(model.params(), gb, loss, 1e-3));
}

TEST(Checkpoint, RoundTripAndShapeMismatch) {
  const auto path = std::filesystem::temp_directory_path() / "goirl_ckpt_test" / "context.json";
  ContextModel m(Widths{4, 3, 3, 3}, 9);
  save_context_model(m, path);
  const ContextModel back = load_context_model(path);
  EXPECT_TRUE(back.params() == m.params());
  Json j = Json::parse(read_text_file(path));
  j["widths"]["lane"] = 5;
  write_text_file(path, j.dump());
  EXPECT_THROW(load_context_model(path), ParseError);
  std::filesystem::remove_all(path.parent_path());
}
