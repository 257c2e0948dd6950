#pragma once

// Differentiable soft rasterizers for top-down silhouettes, height maps and
// cast shadows, with analytic gradients with respect to point positions.
//
// Every point is an isotropic Gaussian splat in the ground plane,
//
//   g_i(u) = exp(-|p_i - c_u|^2 / (2 sigma^2))   if |p_i - c_u| <= trunc * sigma, else 0
//
// where c_u is the center of pixel u. Occupancy combines splats by soft-or,
// O(u) = 1 - prod_i (1 - alpha g_i), and height by a soft maximum,
// H(u) = sum_i w_i z_i / (sum_i w_i + eps_ground) with w_i = g_i exp(beta z_i).
// Shadows are the occupancy of the points projected to the ground along the
// sun direction.
//
// Points are binned to their nearest pixel so each pixel only visits the
// bins within reach of the truncation radius.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "canopy/core.hpp"

namespace canopy {

struct SoftConfig {
  double sigma = 0.25;       // splat bandwidth, meters
  double alpha = 0.9;        // per-splat opacity
  double beta = 2.0;         // soft-max height temperature, 1/m
  double trunc = 3.0;        // cutoff radius in units of sigma
  double eps_ground = 1e-4;  // weight of the virtual ground sample

  bool valid() const noexcept {
    return sigma > 0.0 && std::isfinite(sigma) && alpha > 0.0 && alpha <= 1.0 && beta > 0.0 &&
           std::isfinite(beta) && trunc >= 1.0 && eps_ground > 0.0 && std::isfinite(eps_ground);
  }

  /// Defaults with sigma tied to the raster resolution.
  static SoftConfig for_pixel_size(double pixel_size) {
    SoftConfig cfg;
    cfg.sigma = pixel_size;
    return cfg;
  }
};

inline void require_valid(const SoftConfig& cfg) {
  if (!cfg.valid())
    throw Error(ErrorKind::InvalidConfig,
                "soft config needs sigma > 0, 0 < alpha <= 1, beta > 0, trunc >= 1, eps_ground > 0");
}

/// dL/dp per point.
struct GradBuffer {
  std::vector<Vec3> d_positions;

  GradBuffer() = default;
  explicit GradBuffer(std::size_t n) : d_positions(n) {}

  std::size_t size() const noexcept { return d_positions.size(); }

  GradBuffer& operator+=(const GradBuffer& o) {
    for (std::size_t i = 0; i < d_positions.size(); ++i) d_positions[i] += o.d_positions[i];
    return *this;
  }
  /// this += scale * o
  void add_scaled(const GradBuffer& o, double scale) {
    for (std::size_t i = 0; i < d_positions.size(); ++i) d_positions[i] += o.d_positions[i] * scale;
  }
};

namespace detail {

using Point2 = std::array<double, 2>;

struct Contribution {
  std::size_t index;  // point index
  double g;           // splat weight at the pixel center
  double dx;          // p.x - c.x
  double dy;          // p.y - c.y
};

/// Pixel-bucket index of 2D splat centers over a grid.
class SplatIndex {
 public:
  SplatIndex(std::span<const Point2> xy, const GridSpec& spec, const SoftConfig& cfg)
      : xy_(xy), spec_(spec), inv_two_sigma2_(1.0 / (2.0 * cfg.sigma * cfg.sigma)) {
    const double radius = cfg.trunc * cfg.sigma;
    radius2_ = radius * radius;
    const double reach = std::ceil(radius / spec.pixel_size + 0.5);
    if (!std::isfinite(reach) || reach > static_cast<double>(spec.width + spec.height)) {
      brute_ = true;
      return;
    }
    reach_ = static_cast<int>(reach);
    bins_w_ = spec.width + 2 * reach_;
    bins_h_ = spec.height + 2 * reach_;
    const std::size_t n_bins = static_cast<std::size_t>(bins_w_) * static_cast<std::size_t>(bins_h_);

    std::vector<std::size_t> bin_of(xy.size(), n_bins);
    std::vector<std::size_t> counts(n_bins, 0);
    for (std::size_t i = 0; i < xy.size(); ++i) {
      const auto [u, v] = world_to_pixel(spec, xy[i][0], xy[i][1]);
      const double bu = std::round(u) + reach_;
      const double bv = std::round(v) + reach_;
      if (!(bu >= 0.0 && bu < bins_w_ && bv >= 0.0 && bv < bins_h_)) continue;
      bin_of[i] = static_cast<std::size_t>(bv) * static_cast<std::size_t>(bins_w_) + static_cast<std::size_t>(bu);
      ++counts[bin_of[i]];
    }
    bin_start_.assign(n_bins + 1, 0);
    for (std::size_t b = 0; b < n_bins; ++b) bin_start_[b + 1] = bin_start_[b] + counts[b];
    order_.resize(bin_start_[n_bins]);
    std::vector<std::size_t> cursor(bin_start_.begin(), bin_start_.end() - 1);
    for (std::size_t i = 0; i < xy.size(); ++i)
      if (bin_of[i] < n_bins) order_[cursor[bin_of[i]]++] = i;

    // Summed-area table of bin counts, for skipping empty neighborhoods.
    sat_.assign(static_cast<std::size_t>(bins_w_ + 1) * static_cast<std::size_t>(bins_h_ + 1), 0);
    for (int bv = 0; bv < bins_h_; ++bv) {
      for (int bu = 0; bu < bins_w_; ++bu) {
        const std::size_t c = counts[static_cast<std::size_t>(bv) * bins_w_ + bu];
        sat_at(bu + 1, bv + 1) = c + sat_at(bu, bv + 1) + sat_at(bu + 1, bv) - sat_at(bu, bv);
      }
    }
  }

  /// Calls fn(pixel_index, contributions) for every pixel with at least one
  /// splat in range, in row-major order. `skip(pixel_index)` prunes pixels.
  template <typename Fn, typename Skip>
  void for_each_pixel(Fn&& fn, Skip&& skip) const {
    std::vector<Contribution> scratch;
    for (int pv = 0; pv < spec_.height; ++pv) {
      for (int pu = 0; pu < spec_.width; ++pu) {
        const std::size_t pixel = static_cast<std::size_t>(pv) * spec_.width + pu;
        if (skip(pixel)) continue;
        scratch.clear();
        const auto [cx, cy] = pixel_to_world(spec_, pu, pv);
        if (brute_) {
          for (std::size_t i = 0; i < xy_.size(); ++i) consider(i, cx, cy, scratch);
        } else {
          // Bins pu..pu+2*reach in extended coordinates surround pixel pu.
          const int bu0 = pu, bu1 = pu + 2 * reach_ + 1;
          const int bv0 = pv, bv1 = pv + 2 * reach_ + 1;
          if (sat_at(bu1, bv1) - sat_at(bu0, bv1) - sat_at(bu1, bv0) + sat_at(bu0, bv0) == 0) continue;
          for (int bv = bv0; bv < bv1; ++bv) {
            const std::size_t row = static_cast<std::size_t>(bv) * bins_w_;
            for (std::size_t k = bin_start_[row + bu0]; k < bin_start_[row + bu1]; ++k)
              consider(order_[k], cx, cy, scratch);
          }
        }
        if (!scratch.empty()) fn(pixel, std::span<const Contribution>(scratch));
      }
    }
  }

  template <typename Fn>
  void for_each_pixel(Fn&& fn) const {
    for_each_pixel(std::forward<Fn>(fn), [](std::size_t) { return false; });
  }

 private:
  void consider(std::size_t i, double cx, double cy, std::vector<Contribution>& out) const {
    const double dx = xy_[i][0] - cx;
    const double dy = xy_[i][1] - cy;
    const double d2 = dx * dx + dy * dy;
    if (d2 <= radius2_) out.push_back({i, std::exp(-d2 * inv_two_sigma2_), dx, dy});
  }

  std::size_t& sat_at(int bu, int bv) { return sat_[static_cast<std::size_t>(bv) * (bins_w_ + 1) + bu]; }
  std::size_t sat_at(int bu, int bv) const { return sat_[static_cast<std::size_t>(bv) * (bins_w_ + 1) + bu]; }

  std::span<const Point2> xy_;
  GridSpec spec_;
  double inv_two_sigma2_;
  double radius2_ = 0.0;
  bool brute_ = false;
  int reach_ = 0;
  int bins_w_ = 0;
  int bins_h_ = 0;
  std::vector<std::size_t> bin_start_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> sat_;
};

inline std::vector<Point2> ground_xy(const PointCloud& cloud) {
  std::vector<Point2> xy(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) xy[i] = {cloud.positions[i].x, cloud.positions[i].y};
  return xy;
}

// Per-pixel kernels, shared by the plain renderers and the fused loss sweeps.

inline double transmittance(std::span<const Contribution> cs, double alpha) {
  double transmit = 1.0;
  for (const auto& c : cs) transmit *= 1.0 - alpha * c.g;
  return transmit;
}

inline void occupancy_grad_at(std::span<const Contribution> cs, double alpha, double inv_sigma2, double transmit,
                              double upstream, std::vector<Point2>& grad) {
  for (std::size_t k = 0; k < cs.size(); ++k) {
    const double own = 1.0 - alpha * cs[k].g;
    double others = 1.0;
    if (own >= 1e-12) {
      others = transmit / own;
    } else {
      for (std::size_t j = 0; j < cs.size(); ++j)
        if (j != k) others *= 1.0 - alpha * cs[j].g;
    }
    // dO/dg = alpha * others, dg/dp = -g (p - c) / sigma^2
    const double scale = -upstream * alpha * others * cs[k].g * inv_sigma2;
    grad[cs[k].index][0] += scale * cs[k].dx;
    grad[cs[k].index][1] += scale * cs[k].dy;
  }
}

struct SoftMaxHeight {
  double height;
  double den;
};

/// Fills `weights` with the shifted splat weights.
inline SoftMaxHeight dsm_at(std::span<const Contribution> cs, const PointCloud& cloud, const SoftConfig& cfg,
                            std::vector<double>& weights) {
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& c : cs) top = std::max(top, cloud.positions[c.index].z);
  weights.resize(cs.size());
  double num = 0.0;
  double den = cfg.eps_ground * std::exp(-cfg.beta * top);
  for (std::size_t k = 0; k < cs.size(); ++k) {
    const double z = cloud.positions[cs[k].index].z;
    weights[k] = cs[k].g * std::exp(cfg.beta * (z - top));
    num += weights[k] * z;
    den += weights[k];
  }
  return {num / den, den};
}

inline void dsm_grad_at(std::span<const Contribution> cs, const PointCloud& cloud, const SoftConfig& cfg,
                        double inv_sigma2, const SoftMaxHeight& h, const std::vector<double>& weights,
                        double upstream, GradBuffer& grad) {
  for (std::size_t k = 0; k < cs.size(); ++k) {
    const double z = cloud.positions[cs[k].index].z;
    const double w = weights[k];
    // dH/dw = (z - H) / D; dw/dx = -w dx / sigma^2; dw/dz = beta w
    const double dh_dw = (z - h.height) / h.den;
    Vec3& g = grad.d_positions[cs[k].index];
    g.x += upstream * dh_dw * (-w * cs[k].dx * inv_sigma2);
    g.y += upstream * dh_dw * (-w * cs[k].dy * inv_sigma2);
    g.z += upstream * (w / h.den + dh_dw * cfg.beta * w);
  }
}

inline Grid occupancy_forward(std::span<const Point2> xy, const GridSpec& spec, const SoftConfig& cfg) {
  require_valid(cfg);
  Grid out(spec, 0.0);
  SplatIndex index(xy, spec, cfg);
  index.for_each_pixel([&](std::size_t pixel, std::span<const Contribution> cs) {
    out.values[pixel] = 1.0 - transmittance(cs, cfg.alpha);
  });
  return out;
}

/// Gradient of sum_u d_pixels(u) O(u) with respect to the splat centers.
inline std::vector<Point2> occupancy_backward(std::span<const Point2> xy, const GridSpec& spec,
                                              const SoftConfig& cfg, const Grid& d_pixels) {
  require_valid(cfg);
  require_same_spec(spec, d_pixels.spec, "occupancy backward");
  std::vector<Point2> grad(xy.size(), Point2{0.0, 0.0});
  const double inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
  SplatIndex index(xy, spec, cfg);
  index.for_each_pixel(
      [&](std::size_t pixel, std::span<const Contribution> cs) {
        occupancy_grad_at(cs, cfg.alpha, inv_sigma2, transmittance(cs, cfg.alpha), d_pixels.values[pixel], grad);
      },
      [&](std::size_t pixel) { return d_pixels.values[pixel] == 0.0; });
  return grad;
}

}  // namespace detail

/// Soft occupancy of the points seen from above; values in [0, 1).
inline Grid soft_silhouette(const PointCloud& cloud, const GridSpec& spec, const SoftConfig& cfg) {
  const auto xy = detail::ground_xy(cloud);
  return detail::occupancy_forward(xy, spec, cfg);
}

inline GradBuffer soft_silhouette_backward(const PointCloud& cloud, const GridSpec& spec, const SoftConfig& cfg,
                                           const Grid& d_pixels) {
  const auto xy = detail::ground_xy(cloud);
  const auto g2 = detail::occupancy_backward(xy, spec, cfg, d_pixels);
  GradBuffer grad(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) grad.d_positions[i] = {g2[i][0], g2[i][1], 0.0};
  return grad;
}

/// Soft maximum height per pixel. Weights are shifted by the largest z in
/// range before exponentiation; the ratio is invariant to that shift.
inline Grid soft_dsm(const PointCloud& cloud, const GridSpec& spec, const SoftConfig& cfg) {
  require_valid(cfg);
  const auto xy = detail::ground_xy(cloud);
  Grid out(spec, 0.0);
  detail::SplatIndex index(xy, spec, cfg);
  std::vector<double> weights;
  index.for_each_pixel([&](std::size_t pixel, std::span<const detail::Contribution> cs) {
    out.values[pixel] = detail::dsm_at(cs, cloud, cfg, weights).height;
  });
  return out;
}

inline GradBuffer soft_dsm_backward(const PointCloud& cloud, const GridSpec& spec, const SoftConfig& cfg,
                                    const Grid& d_pixels) {
  require_valid(cfg);
  require_same_spec(spec, d_pixels.spec, "soft_dsm backward");
  const auto xy = detail::ground_xy(cloud);
  GradBuffer grad(cloud.size());
  const double inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
  std::vector<double> weights;
  detail::SplatIndex index(xy, spec, cfg);
  index.for_each_pixel(
      [&](std::size_t pixel, std::span<const detail::Contribution> cs) {
        const auto h = detail::dsm_at(cs, cloud, cfg, weights);
        detail::dsm_grad_at(cs, cloud, cfg, inv_sigma2, h, weights, d_pixels.values[pixel], grad);
      },
      [&](std::size_t pixel) { return d_pixels.values[pixel] == 0.0; });
  return grad;
}

/// Row-major 2x3 Jacobian of a ground projection with respect to (x, y, z).
using Jacobian2x3 = std::array<double, 6>;

struct GroundProjection {
  std::vector<std::array<double, 2>> shadow_xy;
  std::vector<Jacobian2x3> jacobian;  // identical for every point under one sun
};

/// Projects each point to z = 0 along the sun direction.
inline GroundProjection project_to_ground(const PointCloud& cloud, const SunConfig& sun) {
  const ShadowOffset off = shadow_offset(sun);
  GroundProjection proj;
  proj.shadow_xy.reserve(cloud.size());
  for (const auto& p : cloud.positions) proj.shadow_xy.push_back({p.x + p.z * off.dx, p.y + p.z * off.dy});
  proj.jacobian.assign(cloud.size(), Jacobian2x3{1.0, 0.0, off.dx, 0.0, 1.0, off.dy});
  return proj;
}

/// Soft occupancy of the cast shadow on the ground.
inline Grid soft_shadow(const PointCloud& cloud, const SunConfig& sun, const GridSpec& spec, const SoftConfig& cfg) {
  const auto proj = project_to_ground(cloud, sun);
  return detail::occupancy_forward(proj.shadow_xy, spec, cfg);
}

inline GradBuffer soft_shadow_backward(const PointCloud& cloud, const SunConfig& sun, const GridSpec& spec,
                                       const SoftConfig& cfg, const Grid& d_pixels) {
  const auto proj = project_to_ground(cloud, sun);
  const auto g2 = detail::occupancy_backward(proj.shadow_xy, spec, cfg, d_pixels);
  GradBuffer grad(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& J = proj.jacobian[i];
    grad.d_positions[i] = {g2[i][0] * J[0] + g2[i][1] * J[3], g2[i][0] * J[1] + g2[i][1] * J[4],
                           g2[i][0] * J[2] + g2[i][1] * J[5]};
  }
  return grad;
}

}  // namespace canopy
