#include <gtest/gtest.h>

#include <filesystem>

#include "goirl/generator.hpp"
#include "goirl/scene_io.hpp"

using namespace goirl;

namespace {

std::vector<Vec2> all_points(const Scenario& s) {
  std::vector<Vec2> pts;
  for (const auto& l : s.lanes) pts.insert(pts.end(), l.centerline.begin(), l.centerline.end());
  for (const auto& a : s.agents)
    for (const auto& t : a.track) pts.push_back({t.x, t.y});
  for (Vec2 p : future_positions(s)) pts.push_back(p);
  return pts;
}

Scenario simple_scene(Vec2 pos, double yaw) {
  Scenario s;
  s.id = "simple";
  s.drivable_mask.assign(2500, 1);
  AgentTrack t{0, true, {}};
  for (int k = 0; k < kHistorySteps; ++k) {
    const double back = 0.5 * (kHistorySteps - 1 - k);
    t.track.push_back({k - 19, pos.x - back * std::cos(yaw), pos.y - back * std::sin(yaw), true});
  }
  s.agents.push_back(t);
  s.lanes.push_back({1, {{pos.x - 5, pos.y}, {pos.x + 5, pos.y}}, {}, {}, {}, {}});
  s.gt_future = std::vector<FuturePoint>{{1, pos.x + 1.0, pos.y}, {2, pos.x + 2.0, pos.y}};
  s.grid_pose = Pose2{pos.x, pos.y, yaw};
  return s;
}

}  // namespace

TEST(Generator, StraightFutureFollowsLaneCenterline) {
  GeneratorParams gp;
  const Scenario s = to_target_frame(generate_scenario(SceneKind::kStraight, gp, 7)).scenario;
  // The ego lane runs along the target heading; lateral deviation is noise only.
  const auto fut = future_positions(s);
  ASSERT_EQ(fut.size(), 30u);
  double worst = 0.0;
  for (Vec2 p : fut) {
    double best = kInf;
    for (const auto& l : s.lanes) best = std::min(best, distance_to_polyline(p, l.centerline));
    worst = std::max(worst, best);
  }
  EXPECT_LT(worst, 5.0 * gp.noise_sigma + 0.3);
}

TEST(Generator, TJunctionHasSeveralFeasibleModes) {
  GeneratorParams gp;
  gp.block_prob = 0.0;
  const Scenario s = generate_scenario(SceneKind::kTJunction, gp, 1);
  EXPECT_GE(s.metadata.modes.size(), 2u);
  EXPECT_FALSE(s.metadata.blocked_mode.has_value());
  EXPECT_EQ(s.metadata.kind, "t_junction");
}

TEST(Generator, DeterministicPerSeed) {
  GeneratorParams gp;
  for (auto kind : {SceneKind::kStraight, SceneKind::kCurve, SceneKind::kTJunction, SceneKind::kCrossing}) {
    const Scenario a = generate_scenario(kind, gp, 11);
    const Scenario b = generate_scenario(kind, gp, 11);
    EXPECT_EQ(a, b);
    EXPECT_EQ(scenario_to_json(a).dump(), scenario_to_json(b).dump());
    EXPECT_NE(scenario_to_json(a).dump(), scenario_to_json(generate_scenario(kind, gp, 12)).dump());
  }
}

TEST(Generator, InvalidKindIsConfigError) {
  EXPECT_THROW(generate_scenario("roundabout", GeneratorParams{}, 1), ConfigError);
  GeneratorParams bad;
  bad.noise_sigma = 0.9;
  EXPECT_THROW(generate_scenario(SceneKind::kStraight, bad, 1), ConfigError);
}

TEST(Generator, BlockedScenesKeepGroundTruthOnDrivableCells) {
  GeneratorParams gp;
  gp.block_prob = 0.7;
  int blocked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto kind = seed % 2 ? SceneKind::kCrossing : SceneKind::kTJunction;
    const Scenario s = to_target_frame(generate_scenario(kind, gp, seed)).scenario;
    validate(s);
    if (s.metadata.blocked_mode) {
      ++blocked;
      EXPECT_NE(*s.metadata.blocked_mode, *s.mode_label);
    }
    const GridSpec g = s.fine_grid();
    for (Vec2 p : future_positions(s)) {
      auto c = g.locate(p);
      ASSERT_TRUE(c.has_value()) << s.id;
      EXPECT_TRUE(s.drivable(*c)) << s.id << " at (" << p.x << ", " << p.y << ")";
    }
  }
  EXPECT_GT(blocked, 20);
}

TEST(TargetFrame, TranslationExample) {
  const Scenario s = simple_scene({10.0, 5.0}, 0.0);
  const auto n = to_target_frame(s);
  EXPECT_FALSE(n.heading_degenerate);
  const auto& tr = n.scenario.agents[0].track.back();
  EXPECT_NEAR(tr.x, 0.0, 1e-12);
  EXPECT_NEAR(tr.y, 0.0, 1e-12);
  EXPECT_NEAR(n.scenario.lanes[0].centerline[0].x, -5.0, 1e-12);
  EXPECT_NEAR(n.scenario.lanes[0].centerline[0].y, 0.0, 1e-12);
  EXPECT_NEAR((*n.scenario.gt_future)[1].x, 2.0, 1e-12);
  EXPECT_TRUE(n.scenario.grid_pose.is_identity());
}

TEST(TargetFrame, HeadingMapsToPlusX) {
  const Scenario s = simple_scene({-3.0, 7.0}, 1.1);
  const auto n = to_target_frame(s).scenario;
  const auto& tr = n.agents[0].track;
  EXPECT_NEAR(tr.front().y, 0.0, 1e-9);
  EXPECT_LT(tr.front().x, 0.0);
}

TEST(TargetFrame, IsometryAndIdempotence) {
  GeneratorParams gp;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Scenario s = generate_scenario(seed % 2 ? SceneKind::kCrossing : SceneKind::kCurve, gp, seed);
    const auto n = to_target_frame(s);
    const auto a = all_points(s), b = all_points(n.scenario);
    ASSERT_EQ(a.size(), b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); i += 7)
      for (std::size_t j = i + 1; j < a.size(); j += 5)
        worst = std::max(worst, std::abs(distance(a[i], a[j]) - distance(b[i], b[j])));
    EXPECT_LE(worst, 1e-9);
    // The mask was rasterised in this frame, so normalising leaves it untouched.
    EXPECT_EQ(n.scenario.drivable_mask, s.drivable_mask);
    const auto twice = to_target_frame(n.scenario);
    EXPECT_EQ(twice.scenario, n.scenario);
  }
}

TEST(TargetFrame, DegenerateHeadingFallsBackToIdentityRotation) {
  Scenario s = simple_scene({4.0, 2.0}, 0.0);
  for (auto& t : s.agents[0].track) {
    t.x = 4.0;
    t.y = 2.0;
  }
  const auto n = to_target_frame(s);
  EXPECT_TRUE(n.heading_degenerate);
  EXPECT_EQ(n.applied.yaw, 0.0);
  EXPECT_NEAR(n.scenario.lanes[0].centerline[1].x, 5.0, 1e-12);
}

TEST(Quantize, StraightEastOneCellPerStep) {
  const GridSpec g = default_coarse_grid();
  std::vector<Vec2> pts;
  for (int k = 0; k <= 6; ++k) pts.push_back({2.0 * k, 0.0});
  const auto q = quantize_future(pts, g);
  ASSERT_EQ(q.demo.states.size(), 7u);
  for (int k = 0; k < 7; ++k) EXPECT_EQ(g.cell(q.demo.states[static_cast<std::size_t>(k)]), (Cell{12, 12 + k}));
  EXPECT_TRUE(q.demo.ended);
  EXPECT_FALSE(q.clamped);
}

TEST(Quantize, StationaryAgentSingleState) {
  std::vector<Vec2> pts(30, Vec2{0.3, -0.2});
  const auto q = quantize_future(pts, default_coarse_grid());
  EXPECT_EQ(q.demo.states.size(), 1u);
  EXPECT_TRUE(q.demo.ended);
}

TEST(Quantize, DiagonalFutureMovesNorthEast) {
  const GridSpec g = default_coarse_grid();
  std::vector<Vec2> pts;
  for (int k = 0; k <= 20; ++k) pts.push_back({0.5 * k, 0.5 * k});
  const auto q = quantize_future(pts, g);
  ASSERT_GE(q.demo.states.size(), 2u);
  for (std::size_t i = 1; i < q.demo.states.size(); ++i) {
    const Cell a = g.cell(q.demo.states[i - 1]), b = g.cell(q.demo.states[i]);
    EXPECT_EQ(b.row - a.row, 1);
    EXPECT_EQ(b.col - a.col, 1);
  }
}

TEST(Quantize, SkippedCellsAreBridgedAndLongFuturesTruncated) {
  const GridSpec g = default_coarse_grid();
  const std::vector<Vec2> jump{{0.0, 0.0}, {9.0, 3.0}};
  const auto q = quantize_future(jump, g);
  EXPECT_TRUE(is_valid_demonstration(q.demo, g));
  EXPECT_EQ(q.demo.states.size(), 6u);  // (12,12) to (14,17): Chebyshev distance 5

  std::vector<Vec2> long_path;
  for (int k = 0; k < 60; ++k) long_path.push_back({-24.0 + 0.8 * k, 0.0});
  for (int k = 1; k <= 10; ++k) long_path.push_back({23.2, 2.0 * k});
  const auto t = quantize_future(long_path, g);
  EXPECT_EQ(static_cast<int>(t.demo.states.size()), kHorizon);
  EXPECT_FALSE(t.demo.ended);

  const std::vector<Vec2> outside{{0.0, 0.0}, {30.0, 0.0}};
  EXPECT_TRUE(quantize_future(outside, g).clamped);
}

TEST(Quantize, RandomFuturesAlwaysValid) {
  const GridSpec g = default_coarse_grid();
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Vec2> pts;
    Vec2 p{rng.uniform(-24.0, 24.0), rng.uniform(-24.0, 24.0)};
    const int n = 1 + static_cast<int>(rng.index(40));
    for (int k = 0; k < n; ++k) {
      p = p + Vec2{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      p.x = std::clamp(p.x, -24.9, 24.9);
      p.y = std::clamp(p.y, -24.9, 24.9);
      pts.push_back(p);
    }
    const auto q = quantize_future(pts, g);
    EXPECT_TRUE(is_valid_demonstration(q.demo, g));
    for (std::size_t i = 1; i < q.demo.states.size(); ++i) EXPECT_NE(q.demo.states[i], q.demo.states[i - 1]);
  }
}

TEST(ScenarioIo, RoundTripIsLossless) {
  const auto dir = std::filesystem::temp_directory_path() / "goirl_test_io";
  std::filesystem::remove_all(dir);
  GeneratorParams gp;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Scenario s = generate_scenario(static_cast<SceneKind>(seed % 4), gp, seed);
    if (seed == 3) s.blocked_cells = {{3, 4}, {10, 11}};
    const auto path = dir / ("scenario_" + std::to_string(seed) + ".json");
    save_scenario(s, path);
    EXPECT_EQ(load_scenario(path), s);
  }
  EXPECT_EQ(list_scenarios(dir).size(), 6u);
  std::filesystem::remove_all(dir);
}

TEST(ScenarioIo, MissingMaskNamesField) {
  Json j = scenario_to_json(generate_scenario(SceneKind::kStraight, GeneratorParams{}, 2));
  j.erase("drivable_mask");
  try {
    scenario_from_json(j);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "drivable_mask");
  }
}

TEST(ScenarioIo, UnknownFieldsWarn) {
  const Scenario s = generate_scenario(SceneKind::kStraight, GeneratorParams{}, 2);
  Json j = scenario_to_json(s);
  j["weather"] = "rain";
  std::vector<std::string> warnings;
  EXPECT_EQ(scenario_from_json(j, &warnings), s);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("weather"), std::string::npos);
}

TEST(ScenarioIo, MalformedValueNamesField) {
  Json j = scenario_to_json(generate_scenario(SceneKind::kStraight, GeneratorParams{}, 2));
  j["grid_side"] = "fifty";
  EXPECT_THROW(scenario_from_json(j), ParseError);
}
