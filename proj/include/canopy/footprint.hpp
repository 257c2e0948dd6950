#pragma once

#include <algorithm>
#include <cmath>

#include "canopy/core.hpp"

namespace canopy {

/// Draws pixels with probability proportional to a non-negative mask.
class FootprintSampler {
 public:
  explicit FootprintSampler(const Grid& mask) : spec_(mask.spec) {
    cumulative_.reserve(mask.values.size());
    double total = 0.0;
    for (double m : mask.values) {
      total += m > 0.0 ? m : 0.0;
      cumulative_.push_back(total);
    }
    if (!(total > 0.0)) throw Error(ErrorKind::EmptyFootprint, "silhouette has no positive pixel");
  }

  /// Pixel index (row-major) drawn from the mask distribution.
  std::size_t draw_pixel(Rng& rng) const {
    const double pick = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), pick);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

  /// World (x, y) uniformly inside the footprint of `pixel`.
  std::array<double, 2> jitter_in_pixel(std::size_t pixel, Rng& rng) const {
    const int u = static_cast<int>(pixel % static_cast<std::size_t>(spec_.width));
    const int v = static_cast<int>(pixel / static_cast<std::size_t>(spec_.width));
    const double du = rng.uniform() - 0.5;
    const double dv = rng.uniform() - 0.5;
    return pixel_to_world(spec_, u + du, v + dv);
  }

 private:
  GridSpec spec_;
  std::vector<double> cumulative_;
};

inline Rgb scale_color(const Rgb& c, double factor) {
  return {std::clamp(c.r * factor, 0.0, 1.0), std::clamp(c.g * factor, 0.0, 1.0), std::clamp(c.b * factor, 0.0, 1.0)};
}

/// Pixel whose footprint contains (x, y), clamped to the grid.
inline std::size_t containing_pixel(const GridSpec& spec, double x, double y) {
  const auto [u, v] = world_to_pixel(spec, x, y);
  const int pu = static_cast<int>(std::clamp(std::floor(u + 0.5), 0.0, static_cast<double>(spec.width - 1)));
  const int pv = static_cast<int>(std::clamp(std::floor(v + 0.5), 0.0, static_cast<double>(spec.height - 1)));
  return static_cast<std::size_t>(pv) * spec.width + pu;
}

}  // namespace canopy
