#include <gtest/gtest.h>

#include <cmath>

#include "canopy/protree.hpp"
#include "oracles.hpp"

using namespace canopy;

namespace {

TreeRanges fixed_ranges() {
  TreeRanges r;
  r.trunk_height = {5, 5};
  r.trunk_radius = {0.3, 0.3};
  r.branch_depth = {2, 2};
  r.children_per_branch = {3, 3};
  r.length_decay = {0.6, 0.6};
  r.radius_decay = {0.5, 0.5};
  r.branch_angle_deg = {40, 40};
  r.crown_radius = {1.5, 1.5};
  r.foliage_fraction = {0.8, 0.8};
  r.n_points = {500, 500};
  return r;
}

TreeParams params_with(int depth, int children) {
  TreeParams p;
  p.branch_depth = depth;
  p.children_per_branch = {children, children};
  return p;
}

/// Distance from p to the segment axis [a, b].
double axis_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
  return norm(p - (a + ab * t));
}

}  // namespace

TEST(SampleParams, DegenerateRangesAreExact) {
  Rng rng(1);
  const TreeParams p = sample_params(rng, fixed_ranges());
  EXPECT_EQ(p.trunk_height, 5);
  EXPECT_EQ(p.trunk_radius, 0.3);
  EXPECT_EQ(p.branch_depth, 2);
  EXPECT_EQ(p.children_per_branch, (IntRange{3, 3}));
  EXPECT_EQ(p.length_decay, 0.6);
  EXPECT_EQ(p.radius_decay, 0.5);
  EXPECT_EQ(p.crown_radius, 1.5);
  EXPECT_EQ(p.foliage_fraction, 0.8);
  EXPECT_EQ(p.n_points, 500);
}

TEST(SampleParams, Deterministic) {
  Rng a(77), b(77);
  EXPECT_EQ(sample_params(a, TreeRanges{}), sample_params(b, TreeRanges{}));
}

TEST(SampleParams, TrunkHeightMean) {
  TreeRanges r;
  r.trunk_height = {4, 12};
  Rng rng(2024);
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += sample_params(rng, r).trunk_height;
  const double sigma_mean = (8.0 / std::sqrt(12.0)) / 100.0;
  EXPECT_NEAR(sum / n, 8.0, 3 * sigma_mean);
}

TEST(SampleParams, EmptyRangeRejected) {
  TreeRanges r;
  r.crown_radius = {3, 2};
  Rng rng(0);
  try {
    sample_params(rng, r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
  r = TreeRanges{};
  r.length_decay = {0.5, 1.0};
  EXPECT_THROW(sample_params(rng, r), Error);
}

TEST(GrowSkeleton, SegmentCounts) {
  Rng rng(0);
  EXPECT_EQ(grow_skeleton(params_with(0, 3), rng).size(), 1u);
  EXPECT_EQ(grow_skeleton(params_with(1, 3), rng).size(), 4u);
  EXPECT_EQ(grow_skeleton(params_with(2, 2), rng).size(), 7u);
}

TEST(GrowSkeleton, TrunkAndGrowthRules) {
  Rng rng(5);
  TreeParams p = params_with(3, 2);
  const Skeleton sk = grow_skeleton(p, rng);
  EXPECT_EQ(sk.segments[0].start, (Vec3{0, 0, 0}));
  EXPECT_EQ(sk.segments[0].end, (Vec3{0, 0, p.trunk_height}));
  for (std::size_t i = 1; i < sk.size(); ++i) {
    const auto& s = sk.segments[i];
    const auto& parent = sk.segments[static_cast<std::size_t>(s.parent)];
    EXPECT_EQ(s.depth, parent.depth + 1);
    EXPECT_NEAR(norm(s.end - s.start), norm(parent.end - parent.start) * p.length_decay, 1e-9);
    EXPECT_NEAR(s.radius, parent.radius * p.radius_decay, 1e-15);
    const double cos_angle =
        dot(s.end - s.start, parent.end - parent.start) / (norm(s.end - s.start) * norm(parent.end - parent.start));
    const double angle = std::acos(std::clamp(cos_angle, -1.0, 1.0)) * 180.0 / std::numbers::pi;
    EXPECT_GE(angle, p.branch_angle_deg.lo - 1e-6);
    EXPECT_LE(angle, p.branch_angle_deg.hi + 1e-6);
  }
}

TEST(GrowSkeleton, ConnectivityAndRadii) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const TreeParams p = sample_params(rng, TreeRanges{});
    const Skeleton sk = grow_skeleton(p, rng);
    for (std::size_t i = 1; i < sk.size(); ++i) {
      const auto& s = sk.segments[i];
      ASSERT_GE(s.parent, 0);
      const auto& parent = sk.segments[static_cast<std::size_t>(s.parent)];
      EXPECT_LT(norm(s.start - parent.end), 1e-9);
      EXPECT_GT(s.radius, 0.0);
      EXPECT_LT(s.radius, parent.radius);
    }
  }
}

TEST(SampleCloud, PointBudgetIsExact) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    TreeRanges r;
    r.n_points = {1, 3000};
    r.foliage_fraction = {0.0, 1.0};
    const TreeParams p = sample_params(rng, r);
    const Skeleton sk = grow_skeleton(p, rng);
    const PointCloud c = sample_cloud(sk, p, rng);
    ASSERT_EQ(c.size(), static_cast<std::size_t>(p.n_points));
    ASSERT_TRUE(c.has_colors());
    ASSERT_TRUE(c.has_classes());
    EXPECT_TRUE(c.valid());
    std::size_t trunk = 0;
    for (auto k : *c.classes) trunk += k == PointClass::Trunk ? 1 : 0;
    EXPECT_EQ(trunk, static_cast<std::size_t>(std::llround(p.n_points * (1.0 - p.foliage_fraction))));
    for (const auto& q : c.positions) EXPECT_GE(q.z, 0.0);
  }
}

TEST(SampleCloud, HundredPoints) {
  Rng rng(1);
  TreeParams p;
  p.n_points = 100;
  const PointCloud c = sample_cloud(grow_skeleton(p, rng), p, rng);
  EXPECT_EQ(c.size(), 100u);
  EXPECT_EQ(c.colors->size(), 100u);
  EXPECT_EQ(c.classes->size(), 100u);
}

TEST(SampleCloud, AllTrunkStaysOnSurfaces) {
  Rng rng(3);
  TreeParams p;
  p.foliage_fraction = 0.0;
  p.n_points = 3000;
  const Skeleton sk = grow_skeleton(p, rng);
  const PointCloud c = sample_cloud(sk, p, rng);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ((*c.classes)[i], PointClass::Trunk);
    bool on_some = false;
    for (const auto& s : sk.segments)
      on_some = on_some || axis_distance(c.positions[i], s.start, s.end) <= s.radius + 1e-9;
    EXPECT_TRUE(on_some) << i;
  }
}

TEST(SampleCloud, AllFoliageInsideTipSphere) {
  Rng rng(4);
  TreeParams p = params_with(0, 2);
  p.trunk_height = 1.0;
  p.crown_radius = 2.5;
  p.foliage_fraction = 1.0;
  p.n_points = 5000;
  const PointCloud c = sample_cloud(grow_skeleton(p, rng), p, rng);
  bool clamped = false;
  for (const auto& q : c.positions) {
    Vec3 unclamped_bound = q - Vec3{0, 0, p.trunk_height};
    if (q.z == 0.0) {
      clamped = true;
      unclamped_bound.z = 0.0;  // only the horizontal part survives clamping
    }
    EXPECT_LE(norm(unclamped_bound), p.crown_radius + 1e-9);
  }
  EXPECT_TRUE(clamped);
  for (auto k : *c.classes) EXPECT_EQ(k, PointClass::Foliage);
}

TEST(SampleCloud, ColorsJitteredAroundPalette) {
  Rng rng(6);
  TreeParams p;
  const PointCloud c = sample_cloud(grow_skeleton(p, rng), p, rng);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Rgb base = (*c.classes)[i] == PointClass::Trunk ? kTrunkColor : kFoliageColor;
    const Rgb& col = (*c.colors)[i];
    EXPECT_LE(std::abs(col.r - base.r), kColorJitter + 1e-12);
    EXPECT_LE(std::abs(col.g - base.g), kColorJitter + 1e-12);
    EXPECT_LE(std::abs(col.b - base.b), kColorJitter + 1e-12);
  }
}

TEST(GenerateScene, DeterministicAndSeedSensitive) {
  SceneConfig cfg;
  cfg.ranges.n_points = {3000, 3000};
  cfg.grid = GridSpec::centered(64, 64, 0.5);
  const SceneSample a = generate_scene(17, cfg);
  const SceneSample b = generate_scene(17, cfg);
  EXPECT_EQ(a.cloud.positions, b.cloud.positions);
  EXPECT_EQ(*a.cloud.colors, *b.cloud.colors);
  EXPECT_EQ(a.dsm, b.dsm);
  EXPECT_EQ(a.ortho, b.ortho);
  EXPECT_EQ(a.shadow, b.shadow);
  const SceneSample c = generate_scene(18, cfg);
  EXPECT_GT(oracle::chamfer(a.cloud, c.cloud).value, 0.0);
}

TEST(GenerateScene, RastersFollowTheCloud) {
  SceneConfig cfg;
  cfg.ranges.n_points = {3000, 3000};
  const SceneSample s = generate_scene(3, cfg);
  EXPECT_EQ(s.dsm, render_dsm(s.cloud, cfg.grid, cfg.splat_radius));
  EXPECT_EQ(s.silhouette, render_silhouette(s.dsm, cfg.h_min));
  EXPECT_EQ(s.shadow, render_shadow_hard(s.cloud, cfg.sun, cfg.grid, cfg.splat_radius));
  double covered = 0;
  for (double v : s.silhouette.values) covered += v;
  EXPECT_GT(covered, 0.0);
}
