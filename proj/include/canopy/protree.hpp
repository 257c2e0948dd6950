#pragma once

// Procedural tree generator. A tree is grown as a recursive skeleton of
// cylindrical segments; each segment spawns children rotated away from its
// axis by a random angle about a random azimuth. Trunk points are sampled on
// segment surfaces and foliage points in spheres around the branch tips.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>

#include "canopy/core.hpp"
#include "canopy/sensor.hpp"

namespace canopy {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool valid() const noexcept { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; }
  friend constexpr bool operator==(const Range&, const Range&) = default;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
  bool valid() const noexcept { return lo <= hi; }
  friend constexpr bool operator==(const IntRange&, const IntRange&) = default;
};

struct TreeParams {
  double trunk_height = 5.0;
  double trunk_radius = 0.25;
  int branch_depth = 3;
  IntRange children_per_branch{2, 4};
  double length_decay = 0.6;
  double radius_decay = 0.6;
  Range branch_angle_deg{25.0, 55.0};
  double crown_radius = 2.0;
  double foliage_fraction = 0.85;
  int n_points = 2000;

  friend constexpr bool operator==(const TreeParams&, const TreeParams&) = default;
};

/// Species-agnostic sampling ranges for TreeParams. The defaults are sized so
/// a tree and its shadow fit a 32 m x 32 m tile under a mid-elevation sun.
struct TreeRanges {
  Range trunk_height{3.0, 6.0};
  Range trunk_radius{0.15, 0.35};
  IntRange branch_depth{2, 4};
  IntRange children_per_branch{2, 4};
  Range length_decay{0.5, 0.7};
  Range radius_decay{0.5, 0.7};
  Range branch_angle_deg{25.0, 55.0};
  Range crown_radius{1.5, 3.0};
  Range foliage_fraction{0.75, 0.9};
  IntRange n_points{20000, 20000};
};

inline void validate(const TreeParams& p) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (!(p.trunk_height > 0.0)) fail("trunk_height must be positive");
  if (!(p.trunk_radius > 0.0)) fail("trunk_radius must be positive");
  if (p.branch_depth < 0) fail("branch_depth must be >= 0");
  if (!p.children_per_branch.valid() || p.children_per_branch.lo < 0) fail("children_per_branch range is empty or negative");
  if (!(p.length_decay > 0.0 && p.length_decay < 1.0)) fail("length_decay must lie in (0,1)");
  if (!(p.radius_decay > 0.0 && p.radius_decay < 1.0)) fail("radius_decay must lie in (0,1)");
  if (!p.branch_angle_deg.valid()) fail("branch_angle_deg range is empty");
  if (!(p.crown_radius >= 0.0)) fail("crown_radius must be non-negative");
  if (!(p.foliage_fraction >= 0.0 && p.foliage_fraction <= 1.0)) fail("foliage_fraction must lie in [0,1]");
  if (p.n_points < 1) fail("n_points must be >= 1");
}

/// Draws every field uniformly from its range, in declaration order. The
/// per-segment ranges (children, branch angle) are carried over as-is.
inline TreeParams sample_params(Rng& rng, const TreeRanges& ranges) {
  auto check = [](bool ok, const char* name) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, std::string("invalid range for ") + name);
  };
  check(ranges.trunk_height.valid(), "trunk_height");
  check(ranges.trunk_radius.valid(), "trunk_radius");
  check(ranges.branch_depth.valid(), "branch_depth");
  check(ranges.children_per_branch.valid(), "children_per_branch");
  check(ranges.length_decay.valid(), "length_decay");
  check(ranges.radius_decay.valid(), "radius_decay");
  check(ranges.branch_angle_deg.valid(), "branch_angle_deg");
  check(ranges.crown_radius.valid(), "crown_radius");
  check(ranges.foliage_fraction.valid(), "foliage_fraction");
  check(ranges.n_points.valid(), "n_points");
  check(ranges.trunk_height.lo > 0.0 && ranges.trunk_radius.lo > 0.0, "trunk size (must be positive)");
  check(ranges.branch_depth.lo >= 0 && ranges.children_per_branch.lo >= 0, "branching (must be >= 0)");
  check(ranges.length_decay.lo > 0.0 && ranges.length_decay.hi < 1.0, "length_decay (must lie in (0,1))");
  check(ranges.radius_decay.lo > 0.0 && ranges.radius_decay.hi < 1.0, "radius_decay (must lie in (0,1))");
  check(ranges.crown_radius.lo >= 0.0, "crown_radius (must be >= 0)");
  check(ranges.foliage_fraction.lo >= 0.0 && ranges.foliage_fraction.hi <= 1.0, "foliage_fraction (must lie in [0,1])");
  check(ranges.n_points.lo >= 1, "n_points (must be >= 1)");

  auto draw = [&rng](const Range& r) { return rng.uniform(r.lo, r.hi); };
  auto draw_int = [&rng](const IntRange& r) { return static_cast<int>(rng.uniform_int(r.lo, r.hi)); };

  TreeParams p;
  p.trunk_height = draw(ranges.trunk_height);
  p.trunk_radius = draw(ranges.trunk_radius);
  p.branch_depth = draw_int(ranges.branch_depth);
  p.children_per_branch = ranges.children_per_branch;
  p.length_decay = draw(ranges.length_decay);
  p.radius_decay = draw(ranges.radius_decay);
  p.branch_angle_deg = ranges.branch_angle_deg;
  p.crown_radius = draw(ranges.crown_radius);
  p.foliage_fraction = draw(ranges.foliage_fraction);
  p.n_points = draw_int(ranges.n_points);
  validate(p);
  return p;
}

struct Segment {
  Vec3 start;
  Vec3 end;
  double radius = 0.0;
  int depth = 0;
  int parent = -1;  // -1 for the trunk
  int children = 0;
};

struct Skeleton {
  std::vector<Segment> segments;

  std::size_t size() const noexcept { return segments.size(); }
};

namespace detail {

/// Two unit vectors completing `axis` to a right-handed orthonormal basis.
inline std::pair<Vec3, Vec3> orthonormal_basis(const Vec3& axis) {
  const Vec3 helper = std::abs(axis.z) < 0.9 ? Vec3{0.0, 0.0, 1.0} : Vec3{1.0, 0.0, 0.0};
  Vec3 e1 = cross(axis, helper);
  e1 *= 1.0 / norm(e1);
  const Vec3 e2 = cross(axis, e1);
  return {e1, e2};
}

}  // namespace detail

/// Breadth-first growth from the trunk (0,0,0)-(0,0,trunk_height).
inline Skeleton grow_skeleton(const TreeParams& params, Rng& rng) {
  validate(params);
  Skeleton sk;
  sk.segments.push_back({{0.0, 0.0, 0.0}, {0.0, 0.0, params.trunk_height}, params.trunk_radius, 0, -1, 0});

  std::deque<int> frontier{0};
  while (!frontier.empty()) {
    const int idx = frontier.front();
    frontier.pop_front();
    const Segment parent = sk.segments[idx];
    if (parent.depth >= params.branch_depth) continue;

    const Vec3 axis_raw = parent.end - parent.start;
    const double length = norm(axis_raw);
    const Vec3 axis = axis_raw * (1.0 / length);
    const auto [e1, e2] = detail::orthonormal_basis(axis);

    const int k = static_cast<int>(rng.uniform_int(params.children_per_branch.lo, params.children_per_branch.hi));
    for (int c = 0; c < k; ++c) {
      const double angle = deg_to_rad(rng.uniform(params.branch_angle_deg.lo, params.branch_angle_deg.hi));
      const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const Vec3 side = e1 * std::cos(azimuth) + e2 * std::sin(azimuth);
      const Vec3 dir = axis * std::cos(angle) + side * std::sin(angle);
      const double child_len = length * params.length_decay;
      sk.segments.push_back({parent.end, parent.end + dir * child_len, parent.radius * params.radius_decay,
                             parent.depth + 1, idx, 0});
      sk.segments[idx].children += 1;
      frontier.push_back(static_cast<int>(sk.segments.size()) - 1);
    }
  }
  return sk;
}

inline constexpr Rgb kTrunkColor{0.35, 0.23, 0.12};
inline constexpr Rgb kFoliageColor{0.15, 0.45, 0.15};
inline constexpr double kColorJitter = 0.08;

namespace detail {

inline Rgb jitter(const Rgb& base, Rng& rng) {
  auto ch = [&](double c) { return std::clamp(c + rng.uniform(-kColorJitter, kColorJitter), 0.0, 1.0); };
  const double r = ch(base.r);
  const double g = ch(base.g);
  const double b = ch(base.b);
  return {r, g, b};
}

}  // namespace detail

/// Exactly n_points points: round(n * (1 - foliage_fraction)) on segment
/// surfaces, the rest inside crown spheres at the terminal segment ends.
inline PointCloud sample_cloud(const Skeleton& skeleton, const TreeParams& params, Rng& rng) {
  validate(params);
  if (skeleton.segments.empty()) throw Error(ErrorKind::InvalidConfig, "skeleton has no segments");

  const auto n = static_cast<std::size_t>(params.n_points);
  const auto n_trunk =
      std::min(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - params.foliage_fraction))));

  PointCloud cloud;
  cloud.positions.reserve(n);
  cloud.colors.emplace();
  cloud.classes.emplace();
  cloud.colors->reserve(n);
  cloud.classes->reserve(n);

  // Surface area weighting across segments.
  std::vector<double> cumulative;
  cumulative.reserve(skeleton.size());
  double total_area = 0.0;
  for (const auto& s : skeleton.segments) {
    total_area += s.radius * norm(s.end - s.start);
    cumulative.push_back(total_area);
  }

  for (std::size_t i = 0; i < n_trunk; ++i) {
    const double pick = rng.uniform() * total_area;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const Segment& s = skeleton.segments[static_cast<std::size_t>(it - cumulative.begin())];
    const Vec3 axis_raw = s.end - s.start;
    const Vec3 axis = axis_raw * (1.0 / norm(axis_raw));
    const auto [e1, e2] = detail::orthonormal_basis(axis);
    const double t = rng.uniform();
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Vec3 p = s.start + axis_raw * t + (e1 * std::cos(phi) + e2 * std::sin(phi)) * s.radius;
    p.z = std::max(p.z, 0.0);
    cloud.positions.push_back(p);
    cloud.colors->push_back(detail::jitter(kTrunkColor, rng));
    cloud.classes->push_back(PointClass::Trunk);
  }

  std::vector<Vec3> tips;
  for (const auto& s : skeleton.segments)
    if (s.children == 0) tips.push_back(s.end);

  for (std::size_t i = n_trunk; i < n; ++i) {
    const Vec3& center = tips[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tips.size()) - 1))];
    const double r = params.crown_radius * std::cbrt(rng.uniform());
    const double cos_t = rng.uniform(-1.0, 1.0);
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Vec3 p = center + Vec3{sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t} * r;
    p.z = std::max(p.z, 0.0);
    cloud.positions.push_back(p);
    cloud.colors->push_back(detail::jitter(kFoliageColor, rng));
    cloud.classes->push_back(PointClass::Foliage);
  }
  return cloud;
}

struct SceneConfig {
  TreeRanges ranges;
  GridSpec grid = GridSpec::centered(128, 128, 0.25);
  SunConfig sun;
  double splat_radius = kDefaultSplatRadius;
  double h_min = 0.5;  // silhouette threshold on the rendered DSM
};

struct SceneSample {
  std::uint64_t seed = 0;
  GridSpec grid;
  SunConfig sun;
  PointCloud cloud;
  RgbGrid ortho;
  Grid dsm;
  Grid silhouette;
  Grid shadow;
};

/// One synthetic scene; a pure function of (seed, cfg).
inline SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  require_valid(cfg.grid);
  require_valid(cfg.sun);
  Rng rng(seed);
  const TreeParams params = sample_params(rng, cfg.ranges);
  const Skeleton skeleton = grow_skeleton(params, rng);

  SceneSample scene;
  scene.seed = seed;
  scene.grid = cfg.grid;
  scene.sun = cfg.sun;
  scene.cloud = sample_cloud(skeleton, params, rng);
  scene.ortho = render_ortho(scene.cloud, cfg.grid, cfg.splat_radius);
  scene.dsm = render_dsm(scene.cloud, cfg.grid, cfg.splat_radius);
  scene.silhouette = render_silhouette(scene.dsm, cfg.h_min);
  scene.shadow = render_shadow_hard(scene.cloud, cfg.sun, cfg.grid, cfg.splat_radius);
  return scene;
}

}  // namespace canopy
