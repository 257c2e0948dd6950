#include <gtest/gtest.h>

#include <cmath>

#include "canopy/core.hpp"

using namespace canopy;

TEST(WorldToPixel, SpecExamples) {
  auto px = world_to_pixel({10, 10, 0.0, 0.0, 1.0}, Vec3{0, 0, 5});
  EXPECT_DOUBLE_EQ(px.u, 0.0);
  EXPECT_DOUBLE_EQ(px.v, 0.0);
  px = world_to_pixel({10, 10, 0.0, 0.0, 0.5}, Vec3{2, 3, 0});
  EXPECT_DOUBLE_EQ(px.u, 4.0);
  EXPECT_DOUBLE_EQ(px.v, 6.0);
  px = world_to_pixel({10, 10, -5.0, -5.0, 1.0}, Vec3{0, 0, 0});
  EXPECT_DOUBLE_EQ(px.u, 5.0);
  EXPECT_DOUBLE_EQ(px.v, 5.0);
}

TEST(WorldToPixel, RoundTripOnPixelCenters) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const GridSpec spec{64, 48, rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(0.05, 2.0)};
    for (int v = 0; v < spec.height; v += 7)
      for (int u = 0; u < spec.width; u += 5) {
        const auto [x, y] = pixel_to_world(spec, u, v);
        const auto px = world_to_pixel(spec, x, y);
        EXPECT_NEAR(px.u * spec.pixel_size, u * spec.pixel_size, 1e-9);
        EXPECT_NEAR(px.v * spec.pixel_size, v * spec.pixel_size, 1e-9);
      }
  }
}

TEST(GridSpec, CenteredPutsMiddleOnOrigin) {
  const auto spec = GridSpec::centered(128, 128, 0.25);
  const auto [x0, y0] = pixel_to_world(spec, 0, 0);
  const auto [x1, y1] = pixel_to_world(spec, 127, 127);
  EXPECT_DOUBLE_EQ(x0 + x1, 0.0);
  EXPECT_DOUBLE_EQ(y0 + y1, 0.0);
  EXPECT_FALSE((GridSpec{0, 4, 0, 0, 1}.valid()));
  EXPECT_FALSE((GridSpec{4, 4, 0, 0, 0}.valid()));
}

TEST(SunDirection, SpecExamples) {
  auto d = sun_direction({0, 90});
  EXPECT_NEAR(d.x, 0, 1e-15);
  EXPECT_NEAR(d.y, 0, 1e-15);
  EXPECT_NEAR(d.z, -1, 1e-15);
  d = sun_direction({90, 45});
  EXPECT_NEAR(d.x, -std::sqrt(2.0) / 2, 1e-15);
  EXPECT_NEAR(d.y, 0, 1e-15);
  EXPECT_NEAR(d.z, -std::sqrt(2.0) / 2, 1e-15);
  d = sun_direction({180, 30});
  EXPECT_NEAR(d.x, 0, 1e-15);
  EXPECT_NEAR(d.y, 0.8660254037844386, 1e-15);
  EXPECT_NEAR(d.z, -0.5, 1e-15);
}

TEST(SunDirection, AlwaysUnit) {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const SunConfig sun{rng.uniform(-720, 720), rng.uniform(1e-3, 90)};
    EXPECT_LT(std::abs(norm(sun_direction(sun)) - 1.0), 1e-12);
  }
}

TEST(SunDirection, RejectsBadElevation) {
  for (double el : {0.0, -10.0, 90.0001, std::nan("")}) {
    try {
      sun_direction({0, el});
      FAIL() << el;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidSun);
    }
  }
}

TEST(ShadowOffset, MatchesSunDirection) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const SunConfig sun{rng.uniform(0, 360), rng.uniform(5, 89.9)};
    const Vec3 d = sun_direction(sun);
    const auto off = shadow_offset(sun);
    // a unit of height travels -1/d.z along the ray
    EXPECT_NEAR(off.dx, d.x / -d.z, 1e-9);
    EXPECT_NEAR(off.dy, d.y / -d.z, 1e-9);
  }
  const auto zen = shadow_offset({37, 90});
  EXPECT_EQ(zen.dx, 0.0);
  EXPECT_EQ(zen.dy, 0.0);
}

TEST(Rng, SplitMixReferenceStream) {
  Rng rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next(), 0x06C45D188009454FULL);
}

TEST(Rng, MillionDrawsReproducible) {
  Rng a(123456789), b(123456789);
  for (int i = 0; i < 1000000; ++i) ASSERT_EQ(a.next(), b.next()) << i;
  Rng c(99), d(99);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(c.uniform(), d.uniform());
    ASSERT_EQ(c.normal(), d.normal());
    ASSERT_EQ(c.uniform_int(-3, 9), d.uniform_int(-3, 9));
  }
}

TEST(Rng, DrawRanges) {
  Rng rng(8);
  double sum = 0, sum2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = rng.uniform_int(2, 4);
    ASSERT_GE(k, 2);
    ASSERT_LE(k, 4);
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(sum2 / n, 1.0, 0.02);
}

TEST(PointCloud, ValidChecksParallelArrays) {
  PointCloud c;
  c.positions = {{0, 0, 0}, {1, 1, 1}};
  EXPECT_TRUE(c.valid());
  c.colors = std::vector<Rgb>(1);
  EXPECT_FALSE(c.valid());
  c.colors->resize(2);
  EXPECT_TRUE(c.valid());
  c.classes = std::vector<PointClass>(3);
  EXPECT_FALSE(c.valid());
  c.classes->resize(2);
  c.positions[0].x = std::nan("");
  EXPECT_FALSE(c.valid());
}
