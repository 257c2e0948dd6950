#pragma once

// Per-scene reconstruction: targets are derived from the orthophoto and DSM,
// a point cloud is seeded inside the crown footprint, and point positions are
// optimized with Adam against the combined loss. Colors are not optimized;
// they are painted from the orthophoto afterwards.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "canopy/core.hpp"
#include "canopy/diffrender.hpp"
#include "canopy/footprint.hpp"
#include "canopy/losses.hpp"
#include "canopy/metrics.hpp"

namespace canopy {

inline constexpr double kExcessGreenThreshold = 0.05;

struct DerivedTargets {
  Grid silhouette;
  Grid dsm;
  std::optional<Grid> shadow;
};

inline double excess_green(const Rgb& c) { return 2.0 * c.g - c.r - c.b; }

/// Crown mask = (dsm > h_min) and (2g - r - b > 0.05); the height target is
/// the DSM inside the mask and 0 elsewhere.
inline DerivedTargets derive_targets(const RgbGrid& ortho, const Grid& dsm, double h_min,
                                     std::optional<Grid> shadow = std::nullopt) {
  require_same_spec(ortho.spec, dsm.spec, "derive_targets");
  if (shadow) require_same_spec(shadow->spec, dsm.spec, "derive_targets");
  if (!(h_min >= 0.0)) throw Error(ErrorKind::InvalidConfig, "h_min must be non-negative");
  DerivedTargets t{Grid(dsm.spec, 0.0), Grid(dsm.spec, 0.0), std::move(shadow)};
  for (std::size_t i = 0; i < dsm.values.size(); ++i) {
    if (dsm.values[i] > h_min && excess_green(ortho.values[i]) > kExcessGreenThreshold) {
      t.silhouette.values[i] = 1.0;
      t.dsm.values[i] = dsm.values[i];
    }
  }
  return t;
}

namespace detail {

/// Orthophoto color darkened with depth below the canopy surface.
inline Rgb depth_shaded(const Rgb& c, double z, double surface) {
  if (!(surface > 0.0)) return c;
  return scale_color(c, std::sqrt(std::max(z, 0.0) / surface));
}

}  // namespace detail

/// Seeds n_points inside the footprint: pixels drawn by silhouette mass,
/// (x, y) uniform within the pixel, z uniform in [0.2 H, H].
inline PointCloud init_cloud(const Grid& dsm, const Grid& silhouette, const RgbGrid& ortho, int n_points, Rng& rng) {
  require_same_spec(dsm.spec, silhouette.spec, "init_cloud");
  require_same_spec(dsm.spec, ortho.spec, "init_cloud");
  if (n_points < 1) throw Error(ErrorKind::InvalidConfig, "n_points must be >= 1");
  const FootprintSampler sampler(silhouette);
  PointCloud cloud;
  cloud.positions.reserve(static_cast<std::size_t>(n_points));
  cloud.colors.emplace();
  for (int i = 0; i < n_points; ++i) {
    const std::size_t pixel = sampler.draw_pixel(rng);
    const auto [x, y] = sampler.jitter_in_pixel(pixel, rng);
    const double h = dsm.values[pixel];
    const double z = rng.uniform(0.2 * h, h);
    cloud.positions.push_back({x, y, z});
    cloud.colors->push_back(detail::depth_shaded(ortho.values[pixel], z, h));
  }
  return cloud;
}

/// Paints every point from the orthophoto pixel below it.
inline void recolor_from_ortho(PointCloud& cloud, const RgbGrid& ortho, const Grid& dsm) {
  require_same_spec(ortho.spec, dsm.spec, "recolor_from_ortho");
  std::vector<Rgb> colors;
  colors.reserve(cloud.size());
  for (const auto& p : cloud.positions) {
    const std::size_t pixel = containing_pixel(ortho.spec, p.x, p.y);
    colors.push_back(detail::depth_shaded(ortho.values[pixel], p.z, dsm.values[pixel]));
  }
  cloud.colors = std::move(colors);
}

struct AdamParams {
  double lr = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Vec3> m;
  std::vector<Vec3> v;

  explicit AdamState(std::size_t n = 0) : m(n), v(n) {}
};

/// One bias-corrected Adam update of `params` in place; t counts from 1.
inline void adam_step(AdamState& state, std::span<Vec3> params, const GradBuffer& grads, const AdamParams& hp, int t) {
  if (t < 1) throw Error(ErrorKind::InvalidConfig, "adam step index starts at 1");
  if (state.m.size() != params.size() || grads.size() != params.size())
    throw Error(ErrorKind::InvalidConfig, "adam state, parameters and gradients differ in size");
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  auto update = [&](double& theta, double& m, double& v, double g) {
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
    theta -= hp.lr * (m / c1) / (std::sqrt(v / c2) + hp.eps);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Vec3& g = grads.d_positions[i];
    update(params[i].x, state.m[i].x, state.v[i].x, g.x);
    update(params[i].y, state.m[i].y, state.v[i].y, g.y);
    update(params[i].z, state.m[i].z, state.v[i].z, g.z);
  }
}

struct OptimConfig {
  int n_points = 2000;
  int iters = 800;
  AdamParams adam;
  LossWeights weights;
  std::optional<SoftConfig> soft;  // unset: SoftConfig::for_pixel_size(grid pixel size)
  // Coarse-to-fine splat widths as multiples of soft.sigma. The iterations are
  // split into equal consecutive stages and Adam restarts at each stage. Empty
  // runs every step at soft.sigma.
  std::vector<double> sigma_schedule{4.0, 2.4, 1.2, 0.6};
  std::uint64_t seed = 0;
  double h_min = 0.5;
  double h_norm = kDefaultHeightNorm;
  int log_every = 10;
  double eval_tau = kDefaultTau;

  SoftConfig soft_for(const GridSpec& spec) const { return soft ? *soft : SoftConfig::for_pixel_size(spec.pixel_size); }
};

inline void require_valid(const OptimConfig& cfg) {
  if (cfg.n_points < 1) throw Error(ErrorKind::InvalidConfig, "n_points must be >= 1");
  if (cfg.iters < 0) throw Error(ErrorKind::InvalidConfig, "iters must be >= 0");
  if (!(cfg.adam.lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "lr must be positive");
  if (cfg.log_every < 1) throw Error(ErrorKind::InvalidConfig, "log_every must be >= 1");
  require_valid(cfg.weights);
  if (cfg.soft) require_valid(*cfg.soft);
  for (double m : cfg.sigma_schedule)
    if (!(m > 0.0) || !std::isfinite(m)) throw Error(ErrorKind::InvalidConfig, "sigma_schedule entries must be positive");
}

struct LossRecord {
  int iter = 0;
  double total = 0.0;
  LossBreakdown breakdown;
};

struct ReconResult {
  PointCloud cloud;
  std::vector<LossRecord> loss_history;
  std::optional<EvalReport> final_metrics;
};

/// Runs `cfg.iters` Adam steps from `init`, projecting z onto z >= 0 after
/// each step. Steps follow cfg.sigma_schedule; the history always reports
/// the loss at the configured soft.sigma so entries stay comparable. History
/// holds iteration 0, every multiple of log_every, and the final iteration.
inline ReconResult optimize(PointCloud init, const LossTargets& targets, const std::optional<SunConfig>& sun,
                            const GridSpec& spec, const OptimConfig& cfg) {
  require_valid(cfg);
  if (init.empty()) throw Error(ErrorKind::EmptyCloud, "optimization needs a non-empty initial cloud");
  const SoftConfig soft = cfg.soft_for(spec);
  const std::size_t stages = std::max<std::size_t>(cfg.sigma_schedule.size(), 1);
  auto stage_of = [&](int t) {
    return static_cast<std::size_t>(static_cast<long long>(t) * static_cast<long long>(stages) / cfg.iters);
  };
  auto stage_soft = [&](std::size_t k) {
    SoftConfig s = soft;
    if (!cfg.sigma_schedule.empty()) s.sigma *= cfg.sigma_schedule[k];
    return s;
  };

  ReconResult result;
  result.cloud = std::move(init);
  AdamState state(result.cloud.size());
  std::size_t stage = 0;
  int stage_start = 0;
  for (int t = 0;; ++t) {
    const bool log_now = t == cfg.iters || t % cfg.log_every == 0;
    if (t == cfg.iters) {
      auto eval = combined_loss(result.cloud, targets, sun, spec, soft, cfg.weights, cfg.h_norm);
      result.loss_history.push_back({t, eval.value, eval.breakdown});
      break;
    }
    if (const std::size_t k = stage_of(t); k != stage) {
      stage = k;
      stage_start = t;
      state = AdamState(result.cloud.size());
    }
    const SoftConfig step_soft = stage_soft(stage);
    auto eval = combined_loss(result.cloud, targets, sun, spec, step_soft, cfg.weights, cfg.h_norm);
    if (log_now) {
      if (step_soft.sigma == soft.sigma) {
        result.loss_history.push_back({t, eval.value, eval.breakdown});
      } else {
        const auto at_base = combined_loss(result.cloud, targets, sun, spec, soft, cfg.weights, cfg.h_norm);
        result.loss_history.push_back({t, at_base.value, at_base.breakdown});
      }
    }
    adam_step(state, result.cloud.positions, eval.grad, cfg.adam, t - stage_start + 1);
    for (auto& p : result.cloud.positions) p.z = std::max(p.z, 0.0);
  }
  return result;
}

struct ReconInputs {
  RgbGrid ortho;
  Grid dsm;
  std::optional<SunConfig> sun;
  std::optional<Grid> shadow;
  std::optional<PointCloud> gt_cloud;
};

/// Orthophoto + DSM (+ optional sun/shadow/ground truth) to a colored point cloud.
inline ReconResult reconstruct(const ReconInputs& in, const OptimConfig& cfg) {
  require_valid(cfg);
  require_same_spec(in.ortho.spec, in.dsm.spec, "reconstruct");
  if (cfg.weights.geo > 0.0 && !in.gt_cloud)
    throw Error(ErrorKind::MissingTarget, "ground-truth cloud is required when the geometric weight is positive");
  if (cfg.weights.shadow > 0.0) {
    if (!in.shadow) throw Error(ErrorKind::MissingTarget, "shadow target is required when the shadow weight is positive");
    if (!in.sun) throw Error(ErrorKind::MissingTarget, "sun configuration is required when the shadow weight is positive");
  }
  if (in.sun) require_valid(*in.sun);

  DerivedTargets derived = derive_targets(in.ortho, in.dsm, cfg.h_min, in.shadow);
  Rng rng(cfg.seed);
  PointCloud init = init_cloud(in.dsm, derived.silhouette, in.ortho, cfg.n_points, rng);

  LossTargets targets;
  targets.silhouette = std::move(derived.silhouette);
  targets.dsm = std::move(derived.dsm);
  targets.shadow = std::move(derived.shadow);
  targets.gt_cloud = in.gt_cloud;

  ReconResult result = optimize(std::move(init), targets, in.sun, in.dsm.spec, cfg);
  recolor_from_ortho(result.cloud, in.ortho, in.dsm);
  if (in.gt_cloud) result.final_metrics = evaluate(result.cloud, *in.gt_cloud, cfg.eval_tau);
  return result;
}

}  // namespace canopy
