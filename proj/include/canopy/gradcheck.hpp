#pragma once

// Randomized finite-difference verification of every analytic gradient in
// the library. Each trial draws a cloud, soft-renderer configuration and sun,
// then compares analytic gradients of scalar probes against central
// differences with step 1e-4 * sigma.
//
// The renderers cut splats off at trunc * sigma, so a probe value jumps when
// a perturbation moves a point across that radius of some pixel center.
// Chamfer is only piecewise smooth: its gradient jumps where a nearest
// neighbor changes. Trials whose points sit within a few steps of a cutoff
// or of a nearest-neighbor tie are redrawn.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>

#include "canopy/core.hpp"
#include "canopy/diffrender.hpp"
#include "canopy/losses.hpp"

namespace canopy {

enum class GradClass { Silhouette, Dsm, Shadow, Chamfer, Combined };
inline constexpr std::array<GradClass, 5> kGradClasses{GradClass::Silhouette, GradClass::Dsm, GradClass::Shadow,
                                                       GradClass::Chamfer, GradClass::Combined};

inline const char* to_string(GradClass c) {
  switch (c) {
    case GradClass::Silhouette: return "soft_silhouette";
    case GradClass::Dsm: return "soft_dsm";
    case GradClass::Shadow: return "soft_shadow";
    case GradClass::Chamfer: return "chamfer";
    case GradClass::Combined: return "combined_loss";
  }
  return "?";
}

inline constexpr double kGradRelTol = 1e-3;
inline constexpr double kGradAbsFloor = 1e-8;

/// |a - n| / max(|a|, |n|, floor / rel_tol): below kGradRelTol exactly when
/// the pair agrees to the relative tolerance or the absolute floor.
inline double gradient_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradAbsFloor / kGradRelTol});
  return std::abs(analytic - numeric) / scale;
}

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int points = 0;  // 0 draws 20..50 per trial
  int trials = 100;
  double corrupt_scale = 1.0;  // test hook: scales analytic gradients
};

struct GradcheckReport {
  std::array<double, 5> max_error{};  // indexed like kGradClasses
  std::size_t components = 0;
  int trials = 0;
  int redraws = 0;

  bool passed() const {
    return std::all_of(max_error.begin(), max_error.end(), [](double e) { return e < kGradRelTol; });
  }
};

struct GradcheckTrial {
  PointCloud cloud;
  PointCloud other;  // second cloud for Chamfer / geometric target
  GridSpec spec;
  SoftConfig soft;
  SunConfig sun;
  Grid weights;  // probe weights for the renderers
  LossTargets targets;
  LossWeights loss_weights;
};

namespace detail {

/// True when any point or shadow point lies within `margin` of the cutoff
/// circle around some pixel center.
inline bool near_cutoff(const PointCloud& cloud, const SunConfig& sun, const GridSpec& spec, const SoftConfig& soft,
                        double margin) {
  const double radius = soft.trunc * soft.sigma;
  const ShadowOffset off = shadow_offset(sun);
  auto check = [&](double x, double y) {
    for (int v = 0; v < spec.height; ++v) {
      for (int u = 0; u < spec.width; ++u) {
        const auto [cx, cy] = pixel_to_world(spec, u, v);
        if (std::abs(std::hypot(x - cx, y - cy) - radius) < margin) return true;
      }
    }
    return false;
  };
  for (const auto& p : cloud.positions) {
    if (check(p.x, p.y)) return true;
    if (check(p.x + p.z * off.dx, p.y + p.z * off.dy)) return true;
  }
  return false;
}

/// True when some point of `from` has its two nearest points of `to` at
/// distances closer than `margin`.
inline bool near_tie(const PointCloud& from, const PointCloud& to, double margin) {
  if (to.size() < 2) return false;
  for (const auto& p : from.positions) {
    double best = std::numeric_limits<double>::infinity(), second = best;
    for (const auto& q : to.positions) {
      const double d = norm(p - q);
      if (d < best) {
        second = best;
        best = d;
      } else if (d < second) {
        second = d;
      }
    }
    if (second - best < margin) return true;
  }
  return false;
}

inline PointCloud random_cloud(Rng& rng, int n, double half_extent, double z_max) {
  PointCloud c;
  for (int i = 0; i < n; ++i)
    c.positions.push_back(
        {rng.uniform(-half_extent, half_extent), rng.uniform(-half_extent, half_extent), rng.uniform(0.2, z_max)});
  return c;
}

}  // namespace detail

inline GradcheckTrial draw_gradcheck_trial(Rng& rng, int points, int* redraws = nullptr) {
  GradcheckTrial t;
  t.spec = GridSpec::centered(32, 32, 0.25);
  const double ps = t.spec.pixel_size;
  const int n = points > 0 ? points : static_cast<int>(rng.uniform_int(20, 50));
  t.soft.sigma = rng.uniform(0.5, 1.5) * ps;
  t.soft.alpha = rng.uniform(0.5, 1.0);
  t.soft.beta = rng.uniform(0.5, 4.0);
  t.soft.trunc = rng.uniform(2.0, 4.0);
  t.soft.eps_ground = std::exp(rng.uniform(std::log(1e-5), std::log(1e-3)));
  t.sun.azimuth_deg = rng.uniform(0.0, 360.0);
  t.sun.elevation_deg = rng.uniform(20.0, 90.0);

  const double h = 1e-4 * t.soft.sigma;
  const double reach = 1.0 + std::hypot(shadow_offset(t.sun).dx, shadow_offset(t.sun).dy);
  for (;;) {
    t.cloud = detail::random_cloud(rng, n, 1.5, 2.0);
    t.other = detail::random_cloud(rng, n + 5, 1.5, 2.0);
    if (!detail::near_cutoff(t.cloud, t.sun, t.spec, t.soft, 4.0 * h * reach) &&
        !detail::near_tie(t.cloud, t.other, 4.0 * h) && !detail::near_tie(t.other, t.cloud, 4.0 * h))
      break;
    if (redraws) ++*redraws;
  }

  t.weights = Grid(t.spec, 0.0);
  for (auto& w : t.weights.values) w = rng.uniform(-1.0, 1.0);

  Grid sil(t.spec, 0.0), shadow(t.spec, 0.0), dsm(t.spec, 0.0);
  for (auto& v : sil.values) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  for (auto& v : shadow.values) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  for (auto& v : dsm.values) v = rng.uniform(0.0, 2.0);
  t.targets.silhouette = std::move(sil);
  t.targets.shadow = std::move(shadow);
  t.targets.dsm = std::move(dsm);
  t.targets.gt_cloud = t.other;
  t.loss_weights = {rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)};
  return t;
}

/// Largest gradient error of one probe over every coordinate of every point.
inline double check_probe(const PointCloud& cloud, double step, const std::function<double(const PointCloud&)>& value,
                          const GradBuffer& analytic, double corrupt_scale, std::size_t* components = nullptr) {
  double worst = 0.0;
  PointCloud work = cloud;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      auto coord = [&](PointCloud& c) -> double& {
        return axis == 0 ? c.positions[i].x : axis == 1 ? c.positions[i].y : c.positions[i].z;
      };
      const double original = coord(work);
      coord(work) = original + step;
      const double plus = value(work);
      coord(work) = original - step;
      const double minus = value(work);
      coord(work) = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const Vec3& g = analytic.d_positions[i];
      const double a = (axis == 0 ? g.x : axis == 1 ? g.y : g.z) * corrupt_scale;
      worst = std::max(worst, gradient_error(a, numeric));
      if (components) ++*components;
    }
  }
  return worst;
}

inline double weighted_sum(const Grid& a, const Grid& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * w.values[i];
  return s;
}

inline GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  GradcheckReport report;
  Rng rng(opt.seed);
  for (int trial = 0; trial < opt.trials; ++trial) {
    const GradcheckTrial t = draw_gradcheck_trial(rng, opt.points, &report.redraws);
    const double h = 1e-4 * t.soft.sigma;
    auto record = [&](GradClass c, double err) {
      auto& slot = report.max_error[static_cast<std::size_t>(c)];
      slot = std::max(slot, err);
    };

    record(GradClass::Silhouette,
           check_probe(
               t.cloud, h, [&](const PointCloud& c) { return weighted_sum(soft_silhouette(c, t.spec, t.soft), t.weights); },
               soft_silhouette_backward(t.cloud, t.spec, t.soft, t.weights), opt.corrupt_scale, &report.components));
    record(GradClass::Dsm,
           check_probe(
               t.cloud, h, [&](const PointCloud& c) { return weighted_sum(soft_dsm(c, t.spec, t.soft), t.weights); },
               soft_dsm_backward(t.cloud, t.spec, t.soft, t.weights), opt.corrupt_scale, &report.components));
    record(GradClass::Shadow,
           check_probe(
               t.cloud, h,
               [&](const PointCloud& c) { return weighted_sum(soft_shadow(c, t.sun, t.spec, t.soft), t.weights); },
               soft_shadow_backward(t.cloud, t.sun, t.spec, t.soft, t.weights), opt.corrupt_scale,
               &report.components));
    record(GradClass::Chamfer,
           check_probe(
               t.cloud, h, [&](const PointCloud& c) { return chamfer(c, t.other).value; },
               chamfer(t.cloud, t.other).grad_a, opt.corrupt_scale, &report.components));
    const auto combined = [&](const PointCloud& c) {
      return combined_loss(c, t.targets, t.sun, t.spec, t.soft, t.loss_weights);
    };
    record(GradClass::Combined,
           check_probe(
               t.cloud, h, [&](const PointCloud& c) { return combined(c).value; }, combined(t.cloud).grad,
               opt.corrupt_scale, &report.components));
    ++report.trials;
  }
  return report;
}

}  // namespace canopy
