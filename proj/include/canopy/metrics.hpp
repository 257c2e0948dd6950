#pragma once

#include <cstdio>
#include <string>

#include "canopy/core.hpp"
#include "canopy/footprint.hpp"
#include "canopy/losses.hpp"

namespace canopy {

inline constexpr double kDefaultTau = 0.5;

inline double eval_chamfer(const PointCloud& pred, const PointCloud& gt) {
  if (pred.empty() || gt.empty()) throw Error(ErrorKind::EmptyCloud, "chamfer needs two non-empty clouds");
  const auto a_to_b = nearest_neighbors(pred.positions, gt.positions);
  const auto b_to_a = nearest_neighbors(gt.positions, pred.positions);
  double forward = 0.0;
  for (const auto& n : a_to_b) forward += n.squared_distance;
  double backward = 0.0;
  for (const auto& n : b_to_a) backward += n.squared_distance;
  return forward * (1.0 / static_cast<double>(pred.size())) + backward * (1.0 / static_cast<double>(gt.size()));
}

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Precision/recall of points matched within tau; recall is the coverage of `gt`.
inline FScore fscore(const PointCloud& pred, const PointCloud& gt, double tau = kDefaultTau) {
  if (pred.empty() || gt.empty()) throw Error(ErrorKind::EmptyCloud, "fscore needs two non-empty clouds");
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidConfig, "tau must be positive");
  const double tau2 = tau * tau;
  auto matched_fraction = [tau2](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    const auto nn = nearest_neighbors(from, to);
    std::size_t hits = 0;
    for (const auto& n : nn)
      if (n.squared_distance <= tau2) ++hits;
    return static_cast<double>(hits) / static_cast<double>(from.size());
  };
  FScore out;
  out.precision = matched_fraction(pred.positions, gt.positions);
  out.recall = matched_fraction(gt.positions, pred.positions);
  const double sum = out.precision + out.recall;
  out.f = sum > 0.0 ? 2.0 * out.precision * out.recall / sum : 0.0;
  return out;
}

struct EvalReport {
  double chamfer = 0.0;
  FScore score;
  double tau = kDefaultTau;
};

inline EvalReport evaluate(const PointCloud& pred, const PointCloud& gt, double tau = kDefaultTau) {
  return {eval_chamfer(pred, gt), fscore(pred, gt, tau), tau};
}

/// `chamfer=<v> precision=<p> recall=<r> fscore=<f> tau=<t>`; numbers use
/// %.17g so they parse back to the same double.
inline std::string format_report(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "chamfer=%.17g precision=%.17g recall=%.17g fscore=%.17g tau=%.17g", r.chamfer,
                r.score.precision, r.score.recall, r.score.f, r.tau);
  return buf;
}

/// Comparison baseline: points only on the canopy surface, z equal to the
/// DSM height of their pixel, spread over the silhouette like init_cloud.
inline PointCloud baseline_extrude(const Grid& dsm, const Grid& silhouette, const RgbGrid& ortho, int n_points,
                                   Rng& rng) {
  require_same_spec(dsm.spec, silhouette.spec, "baseline_extrude");
  require_same_spec(dsm.spec, ortho.spec, "baseline_extrude");
  if (n_points < 1) throw Error(ErrorKind::InvalidConfig, "n_points must be >= 1");
  const FootprintSampler sampler(silhouette);
  PointCloud cloud;
  cloud.colors.emplace();
  for (int i = 0; i < n_points; ++i) {
    const std::size_t pixel = sampler.draw_pixel(rng);
    const auto [x, y] = sampler.jitter_in_pixel(pixel, rng);
    cloud.positions.push_back({x, y, dsm.values[pixel]});
    cloud.colors->push_back(ortho.values[pixel]);
  }
  return cloud;
}

}  // namespace canopy
