#include <gtest/gtest.h>

#include <cmath>

#include "canopy/io.hpp"
#include "canopy/reconstruct.hpp"
#include "oracles.hpp"

using namespace canopy;

namespace {

const GridSpec kSpec = GridSpec::centered(8, 8, 0.5);

SceneSample small_scene(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.grid = GridSpec::centered(48, 48, 0.5);
  cfg.ranges.n_points = {3000, 3000};
  return generate_scene(seed, cfg);
}

}  // namespace

TEST(DeriveTargets, SpecExamples) {
  RgbGrid ortho(kSpec, kGroundColor);
  Grid dsm(kSpec, 0.0);
  auto t = derive_targets(ortho, dsm, 0.5);
  for (double v : t.silhouette.values) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(t.shadow.has_value());

  ortho.at(1, 1) = {0.2, 0.6, 0.2};
  dsm.at(1, 1) = 6.0;
  ortho.at(2, 2) = {0.5, 0.5, 0.5};
  dsm.at(2, 2) = 6.0;
  ortho.at(3, 3) = {0.2, 0.6, 0.2};
  dsm.at(3, 3) = 0.5;
  t = derive_targets(ortho, dsm, 0.5, Grid(kSpec, 1.0));
  EXPECT_EQ(t.silhouette.at(1, 1), 1.0);
  EXPECT_EQ(t.dsm.at(1, 1), 6.0);
  EXPECT_EQ(t.silhouette.at(2, 2), 0.0);
  EXPECT_EQ(t.dsm.at(2, 2), 0.0);
  EXPECT_EQ(t.silhouette.at(3, 3), 0.0);
  ASSERT_TRUE(t.shadow.has_value());

  EXPECT_THROW(derive_targets(ortho, Grid(GridSpec::centered(4, 4, 0.5), 0.0), 0.5), Error);
}

TEST(InitCloud, SinglePixelRange) {
  Grid dsm(kSpec, 0.0), sil(kSpec, 0.0);
  RgbGrid ortho(kSpec, Rgb{0.2, 0.6, 0.2});
  dsm.at(3, 5) = 8.0;
  sil.at(3, 5) = 1.0;
  Rng rng(1);
  const PointCloud c = init_cloud(dsm, sil, ortho, 500, rng);
  ASSERT_EQ(c.size(), 500u);
  const auto [cx, cy] = pixel_to_world(kSpec, 3, 5);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& p = c.positions[i];
    EXPECT_LE(std::abs(p.x - cx), 0.25);
    EXPECT_LE(std::abs(p.y - cy), 0.25);
    EXPECT_GE(p.z, 1.6);
    EXPECT_LE(p.z, 8.0);
    const double shade = std::sqrt(p.z / 8.0);
    EXPECT_NEAR((*c.colors)[i].g, 0.6 * shade, 1e-12);
  }
}

TEST(InitCloud, BinomialPixelCounts) {
  const GridSpec spec{2, 2, 0, 0, 1};
  Grid dsm(spec, 4.0), sil(spec, 1.0);
  RgbGrid ortho(spec, Rgb{0.2, 0.6, 0.2});
  Rng rng(2);
  const int n = 100000;
  const PointCloud c = init_cloud(dsm, sil, ortho, n, rng);
  int counts[4] = {0, 0, 0, 0};
  for (const auto& p : c.positions) {
    const int u = p.x < 0.5 ? 0 : 1;
    const int v = p.y < 0.5 ? 0 : 1;
    ++counts[v * 2 + u];
  }
  const double sd = std::sqrt(n * 0.25 * 0.75);
  for (int k : counts) EXPECT_NEAR(k, 25000, 3 * sd);
}

TEST(InitCloud, EmptyFootprint) {
  Rng rng(0);
  try {
    init_cloud(Grid(kSpec, 3.0), Grid(kSpec, 0.0), RgbGrid(kSpec), 10, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyFootprint);
  }
}

TEST(AdamStep, SpecExamples) {
  std::vector<Vec3> theta{{1, 2, 3}};
  AdamState state(1);
  GradBuffer zero(1);
  adam_step(state, theta, zero, {}, 1);
  EXPECT_EQ(theta[0], (Vec3{1, 2, 3}));

  AdamState fresh(1);
  GradBuffer ones(1);
  ones.d_positions[0] = {1, 1, 1};
  std::vector<Vec3> x{{0, 0, 0}};
  AdamParams hp;
  hp.lr = 0.1;
  adam_step(fresh, x, ones, hp, 1);
  EXPECT_NEAR(x[0].x, -0.1 / (1 + 1e-8), 1e-15);

  AdamState st(1);
  std::vector<Vec3> y{{0, 0, 0}};
  double prev = 0, last_step = 0;
  for (int t = 1; t <= 100; ++t) {
    adam_step(st, y, ones, hp, t);
    EXPECT_LT(y[0].x, prev);
    last_step = prev - y[0].x;
    prev = y[0].x;
  }
  EXPECT_NEAR(last_step, hp.lr, 1e-6);
  EXPECT_THROW(adam_step(st, y, ones, hp, 0), Error);
}

TEST(Optimize, ZeroItersReturnsInit) {
  const SceneSample s = small_scene(1);
  ReconInputs in{s.ortho, s.dsm, s.sun, s.shadow, std::nullopt};
  OptimConfig cfg;
  cfg.n_points = 300;
  cfg.iters = 0;
  cfg.weights.geo = 0;
  const ReconResult r = reconstruct(in, cfg);
  ASSERT_EQ(r.loss_history.size(), 1u);
  EXPECT_EQ(r.loss_history[0].iter, 0);

  const DerivedTargets t = derive_targets(s.ortho, s.dsm, cfg.h_min);
  Rng rng(cfg.seed);
  const PointCloud init = init_cloud(s.dsm, t.silhouette, s.ortho, cfg.n_points, rng);
  EXPECT_EQ(r.cloud.positions, init.positions);
}

TEST(Optimize, HistoryLengthAndFirstEntry) {
  const SceneSample s = small_scene(2);
  ReconInputs in{s.ortho, s.dsm, s.sun, s.shadow, std::nullopt};
  OptimConfig cfg;
  cfg.n_points = 200;
  cfg.weights.geo = 0;
  cfg.log_every = 7;
  for (int iters : {1, 7, 20, 21}) {
    cfg.iters = iters;
    const ReconResult r = reconstruct(in, cfg);
    EXPECT_EQ(r.loss_history.size(), static_cast<std::size_t>((iters + 6) / 7 + 1)) << iters;
    EXPECT_EQ(r.loss_history.back().iter, iters);
  }

  const DerivedTargets t = derive_targets(s.ortho, s.dsm, cfg.h_min, s.shadow);
  Rng rng(cfg.seed);
  const PointCloud init = init_cloud(s.dsm, t.silhouette, s.ortho, cfg.n_points, rng);
  LossTargets lt{t.silhouette, t.shadow, t.dsm, std::nullopt};
  const double l0 = combined_loss(init, lt, s.sun, s.grid, cfg.soft_for(s.grid), cfg.weights).value;
  cfg.iters = 5;
  EXPECT_EQ(reconstruct(in, cfg).loss_history[0].total, l0);
}

TEST(Optimize, OutputsFiniteAndAboveGround) {
  const SceneSample s = small_scene(3);
  ReconInputs in{s.ortho, s.dsm, s.sun, s.shadow, std::nullopt};
  OptimConfig cfg;
  cfg.n_points = 400;
  cfg.iters = 60;
  cfg.weights.geo = 0;
  const ReconResult r = reconstruct(in, cfg);
  EXPECT_TRUE(r.cloud.valid());
  ASSERT_TRUE(r.cloud.has_colors());
  for (const auto& p : r.cloud.positions) EXPECT_GE(p.z, 0.0);
  EXPECT_LE(r.loss_history.back().total, r.loss_history.front().total);
}

TEST(Optimize, Deterministic) {
  const SceneSample s = small_scene(4);
  ReconInputs in{s.ortho, s.dsm, s.sun, s.shadow, s.cloud};
  OptimConfig cfg;
  cfg.n_points = 300;
  cfg.iters = 40;
  const ReconResult a = reconstruct(in, cfg);
  const ReconResult b = reconstruct(in, cfg);
  EXPECT_EQ(format_ply(a.cloud), format_ply(b.cloud));
  ASSERT_TRUE(a.final_metrics.has_value());
  EXPECT_EQ(a.final_metrics->chamfer, b.final_metrics->chamfer);
}

TEST(Optimize, GeometricTermRecoversNoisyTruth) {
  const SceneSample s = small_scene(5);
  Rng rng(9);
  PointCloud gt, noisy;
  for (std::size_t i = 0; i < 600; ++i) gt.positions.push_back(s.cloud.positions[i * 5]);
  noisy = gt;
  for (auto& p : noisy.positions) {
    p += Vec3{rng.normal(0, 0.5), rng.normal(0, 0.5), rng.normal(0, 0.5)};
    p.z = std::max(p.z, 0.0);
  }
  LossTargets t;
  t.gt_cloud = gt;
  OptimConfig cfg;
  cfg.iters = 500;
  cfg.weights = {1, 0, 0, 0};
  const double before = chamfer(noisy, gt).value;
  const ReconResult r = optimize(noisy, t, std::nullopt, s.grid, cfg);
  EXPECT_LE(chamfer(r.cloud, gt).value, before / 5);
}

TEST(Reconstruct, PreconditionErrors) {
  const SceneSample s = small_scene(6);
  OptimConfig cfg;
  cfg.iters = 1;
  auto kind_of = [&](ReconInputs in, OptimConfig c) {
    try {
      reconstruct(in, c);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind_of({s.ortho, s.dsm, s.sun, s.shadow, std::nullopt}, cfg), ErrorKind::MissingTarget);
  cfg.weights.geo = 0;
  EXPECT_EQ(kind_of({s.ortho, s.dsm, std::nullopt, s.shadow, std::nullopt}, cfg), ErrorKind::MissingTarget);
  EXPECT_EQ(kind_of({s.ortho, s.dsm, s.sun, std::nullopt, std::nullopt}, cfg), ErrorKind::MissingTarget);
  EXPECT_EQ(kind_of({s.ortho, s.dsm, SunConfig{0, -5}, s.shadow, std::nullopt}, cfg), ErrorKind::InvalidSun);
  EXPECT_EQ(kind_of({RgbGrid(s.grid, kGroundColor), s.dsm, s.sun, s.shadow, std::nullopt}, cfg),
            ErrorKind::EmptyFootprint);
  OptimConfig bad = cfg;
  bad.adam.lr = 0;
  EXPECT_EQ(kind_of({s.ortho, s.dsm, s.sun, s.shadow, std::nullopt}, bad), ErrorKind::InvalidConfig);
}
