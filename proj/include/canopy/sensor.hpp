#pragma once

// Hard top-down renderer for synthetic sensor data. Points are splatted as
// disks of fixed radius; a pixel is covered when its center lies within the
// radius of the point's (x, y).

#include <algorithm>
#include <cmath>
#include <limits>

#include "canopy/core.hpp"

namespace canopy {

inline constexpr Rgb kGroundColor{0.55, 0.5, 0.42};
inline constexpr double kDefaultSplatRadius = 0.15;

namespace detail {

/// Calls fn(pixel_index) for every pixel whose center lies within `radius` of (x, y).
template <typename Fn>
void for_each_covered_pixel(const GridSpec& spec, double x, double y, double radius, Fn&& fn) {
  const auto [u, v] = world_to_pixel(spec, x, y);
  const double reach = radius / spec.pixel_size;
  const double r2 = radius * radius;
  const int u0 = std::max(0, static_cast<int>(std::ceil(u - reach)));
  const int u1 = std::min(spec.width - 1, static_cast<int>(std::floor(u + reach)));
  const int v0 = std::max(0, static_cast<int>(std::ceil(v - reach)));
  const int v1 = std::min(spec.height - 1, static_cast<int>(std::floor(v + reach)));
  for (int pv = v0; pv <= v1; ++pv) {
    for (int pu = u0; pu <= u1; ++pu) {
      const auto [cx, cy] = pixel_to_world(spec, pu, pv);
      const double dx = x - cx;
      const double dy = y - cy;
      if (dx * dx + dy * dy <= r2) fn(static_cast<std::size_t>(pv) * spec.width + pu);
    }
  }
}

inline void require_radius(double splat_radius) {
  if (!(splat_radius >= 0.0) || !std::isfinite(splat_radius))
    throw Error(ErrorKind::InvalidConfig, "splat radius must be a finite non-negative length");
}

}  // namespace detail

/// Max-height surface; pixels no point covers stay at ground level 0.
inline Grid render_dsm(const PointCloud& cloud, const GridSpec& spec, double splat_radius = kDefaultSplatRadius) {
  detail::require_radius(splat_radius);
  constexpr double kUncovered = -std::numeric_limits<double>::infinity();
  Grid dsm(spec, kUncovered);
  for (const auto& p : cloud.positions) {
    detail::for_each_covered_pixel(spec, p.x, p.y, splat_radius, [&](std::size_t idx) {
      dsm.values[idx] = std::max(dsm.values[idx], p.z);
    });
  }
  for (auto& h : dsm.values)
    if (h == kUncovered) h = 0.0;
  return dsm;
}

/// Color of the highest covering point; equal heights go to the larger point index.
inline RgbGrid render_ortho(const PointCloud& cloud, const GridSpec& spec,
                            double splat_radius = kDefaultSplatRadius) {
  detail::require_radius(splat_radius);
  if (!cloud.has_colors()) throw Error(ErrorKind::MissingColors, "orthophoto rendering needs point colors");
  RgbGrid ortho(spec, kGroundColor);
  std::vector<double> zbuf(spec.pixel_count(), -std::numeric_limits<double>::infinity());
  const auto& colors = *cloud.colors;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    detail::for_each_covered_pixel(spec, p.x, p.y, splat_radius, [&](std::size_t idx) {
      if (p.z >= zbuf[idx]) {
        zbuf[idx] = p.z;
        ortho.values[idx] = colors[i];
      }
    });
  }
  return ortho;
}

/// Binary mask: 1 where dsm > h_min (strict), else 0.
inline Grid render_silhouette(const Grid& dsm, double h_min) {
  if (!(h_min >= 0.0)) throw Error(ErrorKind::InvalidConfig, "h_min must be non-negative");
  Grid mask(dsm.spec, 0.0);
  for (std::size_t i = 0; i < dsm.values.size(); ++i) mask.values[i] = dsm.values[i] > h_min ? 1.0 : 0.0;
  return mask;
}

/// Ground position hit by the sun ray through p.
inline std::array<double, 2> shadow_point(const Vec3& p, const ShadowOffset& offset) {
  return {p.x + p.z * offset.dx, p.y + p.z * offset.dy};
}

/// Binary cast-shadow mask on the ground plane.
inline Grid render_shadow_hard(const PointCloud& cloud, const SunConfig& sun, const GridSpec& spec,
                               double splat_radius = kDefaultSplatRadius) {
  detail::require_radius(splat_radius);
  const ShadowOffset offset = shadow_offset(sun);
  Grid shadow(spec, 0.0);
  for (const auto& p : cloud.positions) {
    const auto [sx, sy] = shadow_point(p, offset);
    detail::for_each_covered_pixel(spec, sx, sy, splat_radius, [&](std::size_t idx) { shadow.values[idx] = 1.0; });
  }
  return shadow;
}

}  // namespace canopy
