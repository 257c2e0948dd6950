#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "canopy/core.hpp"

namespace canopy {

struct Neighbor {
  std::size_t index = 0;
  double squared_distance = std::numeric_limits<double>::infinity();
};

/// Exact nearest-neighbor queries over a fixed point set using a uniform
/// voxel grid. Results match an exhaustive scan bit for bit: the same
/// squared distance formula is used, and equal distances resolve to the
/// smallest index.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) return;
    lo_ = hi_ = points_.front();
    for (const auto& p : points_) {
      lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y), std::min(lo_.z, p.z)};
      hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y), std::max(hi_.z, p.z)};
    }
    const Vec3 ext = hi_ - lo_;
    const double longest = std::max({ext.x, ext.y, ext.z});
    // About two points per cell over the occupied volume, floored so flat or
    // degenerate sets still get a sane cell size.
    const double floor_ext = std::max(longest * 1e-3, 1e-9);
    const double volume = std::max(ext.x, floor_ext) * std::max(ext.y, floor_ext) * std::max(ext.z, floor_ext);
    cell_ = std::max(std::cbrt(volume * 2.0 / static_cast<double>(points_.size())), floor_ext);
    dims_[0] = cells_along(ext.x);
    dims_[1] = cells_along(ext.y);
    dims_[2] = cells_along(ext.z);

    const std::size_t n_cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    std::vector<std::size_t> cell_of(points_.size());
    std::vector<std::size_t> counts(n_cells, 0);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto c = cell_coords(points_[i]);
      cell_of[i] = flat(c[0], c[1], c[2]);
      ++counts[cell_of[i]];
    }
    start_.assign(n_cells + 1, 0);
    for (std::size_t c = 0; c < n_cells; ++c) start_[c + 1] = start_[c] + counts[c];
    order_.resize(points_.size());
    std::vector<std::size_t> cursor(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i) order_[cursor[cell_of[i]]++] = i;
  }

  std::size_t size() const noexcept { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  Neighbor nearest(const Vec3& q) const {
    Neighbor best;
    if (points_.empty()) return best;
    const auto c = cell_coords(q);
    const int max_shell = std::max({dims_[0], dims_[1], dims_[2]});
    for (int s = 0; s <= max_shell; ++s) {
      visit_shell(c, s, q, best);
      // Unvisited cells lie at least s cells away along some axis.
      const double bound = static_cast<double>(s) * cell_;
      if (best.squared_distance < bound * bound * (1.0 - 1e-12)) break;
    }
    return best;
  }

 private:
  int cells_along(double extent) const {
    return std::max(1, static_cast<int>(std::floor(extent / cell_)) + 1);
  }

  std::array<int, 3> cell_coords(const Vec3& p) const {
    auto axis = [&](double v, double lo, int dim) {
      const double c = std::floor((v - lo) / cell_);
      return static_cast<int>(std::clamp(c, 0.0, static_cast<double>(dim - 1)));
    };
    return {axis(p.x, lo_.x, dims_[0]), axis(p.y, lo_.y, dims_[1]), axis(p.z, lo_.z, dims_[2])};
  }

  std::size_t flat(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i;
  }

  void visit_cell(int i, int j, int k, const Vec3& q, Neighbor& best) const {
    const std::size_t c = flat(i, j, k);
    for (std::size_t n = start_[c]; n < start_[c + 1]; ++n) {
      const std::size_t idx = order_[n];
      const double d2 = squared_distance(q, points_[idx]);
      if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) best = {idx, d2};
    }
  }

  void visit_shell(const std::array<int, 3>& c, int s, const Vec3& q, Neighbor& best) const {
    const int i0 = std::max(0, c[0] - s), i1 = std::min(dims_[0] - 1, c[0] + s);
    const int j0 = std::max(0, c[1] - s), j1 = std::min(dims_[1] - 1, c[1] + s);
    const int k0 = std::max(0, c[2] - s), k1 = std::min(dims_[2] - 1, c[2] + s);
    for (int k = k0; k <= k1; ++k) {
      const bool k_face = std::abs(k - c[2]) == s;
      for (int j = j0; j <= j1; ++j) {
        const bool jk_face = k_face || std::abs(j - c[1]) == s;
        if (jk_face) {
          for (int i = i0; i <= i1; ++i) visit_cell(i, j, k, q, best);
        } else {
          if (c[0] - s >= 0) visit_cell(c[0] - s, j, k, q, best);
          if (s > 0 && c[0] + s < dims_[0]) visit_cell(c[0] + s, j, k, q, best);
        }
      }
    }
  }

  std::vector<Vec3> points_;
  Vec3 lo_;
  Vec3 hi_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

}  // namespace canopy
