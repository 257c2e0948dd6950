#pragma once

// Domain types shared by every module: points, clouds, georeferenced rasters,
// the sun model, and the portable random number generator.
//
// Conventions: meters everywhere, z up, ground plane at z = 0. Pixel (0,0)
// is centered on (origin_x, origin_y); u grows with +x and v with +y.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "canopy/error.hpp"

namespace canopy {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr double squared_norm(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(squared_norm(a)); }
constexpr double squared_distance(const Vec3& a, const Vec3& b) { return squared_norm(a - b); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  friend constexpr bool operator==(const Rgb&, const Rgb&) = default;
};

enum class PointClass : std::uint8_t { Trunk = 0, Foliage = 1 };

struct PointCloud {
  std::vector<Vec3> positions;
  std::optional<std::vector<Rgb>> colors;
  std::optional<std::vector<PointClass>> classes;

  std::size_t size() const noexcept { return positions.size(); }
  bool empty() const noexcept { return positions.empty(); }
  bool has_colors() const noexcept { return colors.has_value(); }
  bool has_classes() const noexcept { return classes.has_value(); }

  /// Checks the parallel-array and finiteness invariants.
  bool valid() const {
    if (colors && colors->size() != positions.size()) return false;
    if (classes && classes->size() != positions.size()) return false;
    for (const auto& p : positions)
      if (!is_finite(p)) return false;
    return true;
  }
};

struct GridSpec {
  int width = 1;
  int height = 1;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool valid() const noexcept {
    return width >= 1 && height >= 1 && pixel_size > 0.0 && std::isfinite(pixel_size) &&
           std::isfinite(origin_x) && std::isfinite(origin_y);
  }
  friend constexpr bool operator==(const GridSpec&, const GridSpec&) = default;

  /// Grid of `width` x `height` pixels whose center lies on the world origin.
  static GridSpec centered(int width, int height, double pixel_size) {
    return {width, height, -0.5 * (width - 1) * pixel_size, -0.5 * (height - 1) * pixel_size,
            pixel_size};
  }
};

inline void require_valid(const GridSpec& spec) {
  if (!spec.valid()) throw Error(ErrorKind::InvalidConfig, "grid spec needs width, height >= 1 and pixel_size > 0");
}

template <typename T>
struct Raster {
  GridSpec spec;
  std::vector<T> values;

  Raster() : values(1) {}
  explicit Raster(const GridSpec& s, T fill = T{}) : spec(s), values(s.pixel_count(), fill) {
    require_valid(s);
  }

  int width() const noexcept { return spec.width; }
  int height() const noexcept { return spec.height; }
  std::size_t index(int u, int v) const noexcept {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(spec.width) + static_cast<std::size_t>(u);
  }
  T& at(int u, int v) { return values[index(u, v)]; }
  const T& at(int u, int v) const { return values[index(u, v)]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Single-channel raster: DSM heights, occupancy masks, per-pixel loss gradients.
using Grid = Raster<double>;
/// Orthophoto raster, channels in [0,1].
using RgbGrid = Raster<Rgb>;

inline void require_same_spec(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw Error(ErrorKind::SpecMismatch, std::string(what) + ": grid specs differ");
}

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

constexpr PixelCoord world_to_pixel(const GridSpec& spec, double x, double y) {
  return {(x - spec.origin_x) / spec.pixel_size, (y - spec.origin_y) / spec.pixel_size};
}
constexpr PixelCoord world_to_pixel(const GridSpec& spec, const Vec3& p) {
  return world_to_pixel(spec, p.x, p.y);
}

/// World (x, y) of a continuous pixel coordinate; integer (u, v) hit pixel centers.
constexpr std::array<double, 2> pixel_to_world(const GridSpec& spec, double u, double v) {
  return {spec.origin_x + u * spec.pixel_size, spec.origin_y + v * spec.pixel_size};
}

struct SunConfig {
  double azimuth_deg = 135.0;   // clockwise from +y (north)
  double elevation_deg = 55.0;  // above the horizon
  friend constexpr bool operator==(const SunConfig&, const SunConfig&) = default;
};

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

inline void require_valid(const SunConfig& sun) {
  if (!(sun.elevation_deg > 0.0 && sun.elevation_deg <= 90.0) || !std::isfinite(sun.azimuth_deg))
    throw Error(ErrorKind::InvalidSun, "sun elevation must lie in (0, 90] degrees");
}

/// Unit direction in which sunlight travels (points downward).
inline Vec3 sun_direction(const SunConfig& sun) {
  require_valid(sun);
  const double az = deg_to_rad(sun.azimuth_deg);
  const double el = deg_to_rad(sun.elevation_deg);
  return {-std::sin(az) * std::cos(el), -std::cos(az) * std::cos(el), -std::sin(el)};
}

/// Horizontal displacement of a ground shadow per meter of height:
/// shadow(x, y) = (x + z * dx, y + z * dy).
struct ShadowOffset {
  double dx = 0.0;
  double dy = 0.0;
};

inline ShadowOffset shadow_offset(const SunConfig& sun) {
  require_valid(sun);
  if (sun.elevation_deg == 90.0) return {0.0, 0.0};
  const double az = deg_to_rad(sun.azimuth_deg);
  const double tan_el = std::tan(deg_to_rad(sun.elevation_deg));
  return {-std::sin(az) / tan_el, -std::cos(az) / tan_el};
}

/// SplitMix64 counter generator. The whole stream is a function of the seed:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// Derived draws: uniform() = (next() >> 11) * 2^-53; uniform_int(lo, hi) =
/// lo + next() % (hi - lo + 1); normal() is Box-Muller on two uniforms with
/// the sine branch discarded.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next());
    return lo + static_cast<std::int64_t>(next() % span);
  }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace canopy
