#pragma once

// Training objective: squared Chamfer distance for geometric supervision plus
// mean-squared raster losses on the soft silhouette, shadow and height maps.

#include <optional>

#include "canopy/core.hpp"
#include "canopy/diffrender.hpp"
#include "canopy/nearest.hpp"

namespace canopy {

struct ChamferResult {
  double value = 0.0;
  GradBuffer grad_a;
};

/// Nearest neighbor in `b` of every point of `a`.
inline std::vector<Neighbor> nearest_neighbors(std::span<const Vec3> a, std::span<const Vec3> b) {
  NearestNeighborIndex index(b);
  std::vector<Neighbor> out;
  out.reserve(a.size());
  for (const auto& p : a) out.push_back(index.nearest(p));
  return out;
}

/// Symmetric mean squared nearest-neighbor distance and its gradient with
/// respect to the points of `a`. Ties pick the neighbor with the smallest index.
inline ChamferResult chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyCloud, "chamfer needs two non-empty clouds");
  const auto& pa = a.positions;
  const auto& pb = b.positions;
  const auto a_to_b = nearest_neighbors(pa, pb);
  const auto b_to_a = nearest_neighbors(pb, pa);
  const double inv_a = 1.0 / static_cast<double>(pa.size());
  const double inv_b = 1.0 / static_cast<double>(pb.size());

  double forward = 0.0;
  for (const auto& n : a_to_b) forward += n.squared_distance;
  double backward = 0.0;
  for (const auto& n : b_to_a) backward += n.squared_distance;

  ChamferResult out{forward * inv_a + backward * inv_b, GradBuffer(pa.size())};
  for (std::size_t i = 0; i < pa.size(); ++i) out.grad_a.d_positions[i] += (pa[i] - pb[a_to_b[i].index]) * (2.0 * inv_a);
  for (std::size_t j = 0; j < pb.size(); ++j) {
    const std::size_t i = b_to_a[j].index;
    out.grad_a.d_positions[i] += (pa[i] - pb[j]) * (2.0 * inv_b);
  }
  return out;
}

struct RasterLoss {
  double value = 0.0;
  Grid d_pixels;
};

/// Mean squared pixel difference and its gradient with respect to `pred`.
inline RasterLoss raster_l2(const Grid& pred, const Grid& target) {
  require_same_spec(pred.spec, target.spec, "raster_l2");
  const double inv_p = 1.0 / static_cast<double>(pred.values.size());
  RasterLoss out{0.0, Grid(pred.spec, 0.0)};
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double diff = pred.values[i] - target.values[i];
    out.value += diff * diff;
    out.d_pixels.values[i] = 2.0 * diff * inv_p;
  }
  out.value *= inv_p;
  return out;
}

namespace detail {

// Render and raster_l2 in a single sweep over the splats: each pixel's value,
// its loss gradient and the point gradients are produced together. Same
// arithmetic as the separate forward / raster_l2 / backward calls.

inline double occupancy_l2(std::span<const Point2> xy, const GridSpec& spec, const SoftConfig& cfg,
                           const Grid& target, std::vector<Point2>& grad) {
  require_valid(cfg);
  require_same_spec(spec, target.spec, "occupancy loss");
  const double inv_p = 1.0 / static_cast<double>(spec.pixel_count());
  const double inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
  Grid pred(spec, 0.0);
  grad.assign(xy.size(), Point2{0.0, 0.0});
  SplatIndex index(xy, spec, cfg);
  index.for_each_pixel([&](std::size_t pixel, std::span<const Contribution> cs) {
    const double transmit = transmittance(cs, cfg.alpha);
    pred.values[pixel] = 1.0 - transmit;
    const double upstream = 2.0 * (pred.values[pixel] - target.values[pixel]) * inv_p;
    if (upstream != 0.0) occupancy_grad_at(cs, cfg.alpha, inv_sigma2, transmit, upstream, grad);
  });
  return raster_l2(pred, target).value;
}

struct TopDownLoss {
  double sil = 0.0;
  double dsm = 0.0;  // before height normalization
  GradBuffer grad_sil;
  GradBuffer grad_dsm;
};

/// Silhouette and DSM share the splat footprint; either target may be null.
inline TopDownLoss top_down_l2(const PointCloud& cloud, const GridSpec& spec, const SoftConfig& cfg,
                               const Grid* sil_target, const Grid* dsm_target) {
  require_valid(cfg);
  if (sil_target) require_same_spec(spec, sil_target->spec, "silhouette loss");
  if (dsm_target) require_same_spec(spec, dsm_target->spec, "dsm loss");
  const double inv_p = 1.0 / static_cast<double>(spec.pixel_count());
  const double inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
  const auto xy = ground_xy(cloud);
  Grid sil(spec, 0.0), dsm(spec, 0.0);
  std::vector<Point2> g_sil(sil_target ? cloud.size() : 0, Point2{0.0, 0.0});
  TopDownLoss out;
  out.grad_dsm = GradBuffer(dsm_target ? cloud.size() : 0);
  std::vector<double> weights;
  SplatIndex index(xy, spec, cfg);
  index.for_each_pixel([&](std::size_t pixel, std::span<const Contribution> cs) {
    if (sil_target) {
      const double transmit = transmittance(cs, cfg.alpha);
      sil.values[pixel] = 1.0 - transmit;
      const double upstream = 2.0 * (sil.values[pixel] - sil_target->values[pixel]) * inv_p;
      if (upstream != 0.0) occupancy_grad_at(cs, cfg.alpha, inv_sigma2, transmit, upstream, g_sil);
    }
    if (dsm_target) {
      const auto h = dsm_at(cs, cloud, cfg, weights);
      dsm.values[pixel] = h.height;
      const double upstream = 2.0 * (h.height - dsm_target->values[pixel]) * inv_p;
      if (upstream != 0.0) dsm_grad_at(cs, cloud, cfg, inv_sigma2, h, weights, upstream, out.grad_dsm);
    }
  });
  if (sil_target) {
    out.sil = raster_l2(sil, *sil_target).value;
    out.grad_sil = GradBuffer(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) out.grad_sil.d_positions[i] = {g_sil[i][0], g_sil[i][1], 0.0};
  }
  if (dsm_target) out.dsm = raster_l2(dsm, *dsm_target).value;
  return out;
}

}  // namespace detail

struct LossWeights {
  double geo = 1.0;
  double sil = 1.0;
  double shadow = 0.5;
  double dsm = 1.0;
};

inline void require_valid(const LossWeights& w) {
  const bool nonneg = w.geo >= 0.0 && w.sil >= 0.0 && w.shadow >= 0.0 && w.dsm >= 0.0;
  if (!nonneg || (w.geo == 0.0 && w.sil == 0.0 && w.shadow == 0.0 && w.dsm == 0.0))
    throw Error(ErrorKind::InvalidConfig, "loss weights must be non-negative with at least one positive");
}

struct LossTargets {
  std::optional<Grid> silhouette;
  std::optional<Grid> shadow;
  std::optional<Grid> dsm;
  std::optional<PointCloud> gt_cloud;
};

/// Unweighted per-term values. The dsm entry already includes the 1/h_norm^2
/// normalization, so total = sum of weight * term.
struct LossBreakdown {
  double geo = 0.0;
  double sil = 0.0;
  double shadow = 0.0;
  double dsm = 0.0;
};

struct LossEvaluation {
  double value = 0.0;
  GradBuffer grad;
  LossBreakdown breakdown;
};

inline constexpr double kDefaultHeightNorm = 10.0;

/// Weighted sum of the active terms (weight > 0); inactive terms report 0.
inline LossEvaluation combined_loss(const PointCloud& cloud, const LossTargets& targets,
                                    const std::optional<SunConfig>& sun, const GridSpec& spec,
                                    const SoftConfig& soft, const LossWeights& w,
                                    double h_norm = kDefaultHeightNorm) {
  require_valid(w);
  require_valid(soft);
  if (!(h_norm > 0.0)) throw Error(ErrorKind::InvalidConfig, "h_norm must be positive");
  auto need = [](bool present, const char* what) {
    if (!present) throw Error(ErrorKind::MissingTarget, std::string(what) + " is required by a positive loss weight");
  };
  if (w.geo > 0.0) need(targets.gt_cloud.has_value(), "ground-truth cloud");
  if (w.sil > 0.0) need(targets.silhouette.has_value(), "silhouette target");
  if (w.shadow > 0.0) {
    need(targets.shadow.has_value(), "shadow target");
    need(sun.has_value(), "sun configuration");
  }
  if (w.dsm > 0.0) need(targets.dsm.has_value(), "dsm target");
  for (const Grid* g : {targets.silhouette ? &*targets.silhouette : nullptr,
                        targets.shadow ? &*targets.shadow : nullptr, targets.dsm ? &*targets.dsm : nullptr})
    if (g) require_same_spec(g->spec, spec, "loss target");

  LossEvaluation out{0.0, GradBuffer(cloud.size()), {}};
  if (w.geo > 0.0) {
    auto cd = chamfer(cloud, *targets.gt_cloud);
    out.breakdown.geo = cd.value;
    out.grad.add_scaled(cd.grad_a, w.geo);
  }
  if (w.sil > 0.0 || w.dsm > 0.0) {
    const auto top = detail::top_down_l2(cloud, spec, soft, w.sil > 0.0 ? &*targets.silhouette : nullptr,
                                         w.dsm > 0.0 ? &*targets.dsm : nullptr);
    if (w.sil > 0.0) {
      out.breakdown.sil = top.sil;
      out.grad.add_scaled(top.grad_sil, w.sil);
    }
    if (w.dsm > 0.0) {
      const double norm2 = h_norm * h_norm;
      out.breakdown.dsm = top.dsm / norm2;
      out.grad.add_scaled(top.grad_dsm, w.dsm / norm2);
    }
  }
  if (w.shadow > 0.0) {
    const auto proj = project_to_ground(cloud, *sun);
    std::vector<detail::Point2> g2;
    out.breakdown.shadow = detail::occupancy_l2(proj.shadow_xy, spec, soft, *targets.shadow, g2);
    GradBuffer g(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& J = proj.jacobian[i];
      g.d_positions[i] = {g2[i][0] * J[0] + g2[i][1] * J[3], g2[i][0] * J[1] + g2[i][1] * J[4],
                          g2[i][0] * J[2] + g2[i][1] * J[5]};
    }
    out.grad.add_scaled(g, w.shadow);
  }
  out.value = w.geo * out.breakdown.geo + w.sil * out.breakdown.sil + w.shadow * out.breakdown.shadow +
              w.dsm * out.breakdown.dsm;
  return out;
}

}  // namespace canopy
