#include <gtest/gtest.h>

#include <filesystem>

#include "canopy/io.hpp"
#include "roundtrip.hpp"

using namespace canopy;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("canopy_test_io_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidConfig;
}

template <typename F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

const std::string kManifest = R"({
  "seed": 7,
  "grid": {"width": 4, "height": 3, "origin_x": -1.5, "origin_y": -1.0, "pixel_size": 1.0},
  "sun": {"azimuth_deg": 135.0, "elevation_deg": 55.0},
  "files": {"ortho": "ortho.ppm", "dsm": "dsm.pfm", "silhouette": "silhouette.pfm", "shadow": "shadow.pfm", "cloud": "gt.ply"},
  "generator_version": "canopy-protree/1"
})";

}  // namespace

TEST(RoundTrip, FiveHundredPerFormat) {
  const auto f = roundtrip::run(500, 2024, scratch("rt"));
  EXPECT_EQ(f.ply, 0);
  EXPECT_EQ(f.pfm, 0);
  EXPECT_EQ(f.ppm, 0);
  EXPECT_EQ(f.manifest, 0);
}

TEST(Ply, ExactBytes) {
  PointCloud c;
  c.positions = {{1, 2.5, 0.1}};
  c.colors = std::vector<Rgb>{{1.0, 0.5, 0.0}};
  c.classes = std::vector<PointClass>{PointClass::Foliage};
  EXPECT_EQ(format_ply(c),
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar class\nend_header\n"
            "1 2.5 0.100000001 255 128 0 1\n");
}

TEST(Ply, RoundHalfUp) {
  EXPECT_EQ(to_uchar(0.5), 128);
  EXPECT_EQ(to_uchar(0.0), 0);
  EXPECT_EQ(to_uchar(1.0), 255);
  EXPECT_EQ(to_uchar(2.0), 255);
  EXPECT_EQ(to_uchar(-1.0), 0);
}

TEST(Ply, MalformedInputsNameTheLine) {
  const std::string head = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  EXPECT_EQ(kind_of([&] { parse_ply(head + "0 0 0\n"); }), ErrorKind::MalformedPly);
  EXPECT_EQ(kind_of([&] { parse_ply(head + "0 0 0\n1 x 2\n"); }), ErrorKind::MalformedPly);
  EXPECT_NE(message_of([&] { parse_ply(head + "0 0 0\n1 x 2\n"); }).find("line 9"), std::string::npos);
  EXPECT_EQ(kind_of([&] { parse_ply("plx\n"); }), ErrorKind::MalformedPly);
  EXPECT_EQ(kind_of([&] { parse_ply("ply\nformat binary_little_endian 1.0\n"); }), ErrorKind::MalformedPly);
  EXPECT_EQ(kind_of([&] { parse_ply(head + "0 0 0 9\n1 1 1\n"); }), ErrorKind::MalformedPly);
  EXPECT_EQ(kind_of([&] { read_ply("/nonexistent/cloud.ply"); }), ErrorKind::Io);
}

TEST(Pfm, BottomRowFirstLittleEndian) {
  Grid g(GridSpec{2, 2, 0, 0, 1}, 0.0);
  g.at(0, 0) = 1.0;
  g.at(1, 1) = 2.0;
  const std::string bytes = format_pfm(g);
  ASSERT_EQ(bytes.size(), std::string("Pf\n2 2\n-1.0\n").size() + 16);
  EXPECT_EQ(bytes.substr(0, 12), "Pf\n2 2\n-1.0\n");
  float first, last;
  std::memcpy(&first, bytes.data() + 12, 4);
  std::memcpy(&last, bytes.data() + 24, 4);
  EXPECT_EQ(first, 1.0f);
  EXPECT_EQ(last, 2.0f);
}

TEST(Pfm, ErrorsAndSpecMismatch) {
  EXPECT_EQ(kind_of([] { parse_pfm("PF\n1 1\n-1.0\n0000"); }), ErrorKind::MalformedPfm);
  EXPECT_EQ(kind_of([] { parse_pfm("Pf\n2 2\n-1.0\n0000"); }), ErrorKind::MalformedPfm);
  EXPECT_EQ(kind_of([] { parse_pfm("Pf\n0 2\n-1.0\n"); }), ErrorKind::MalformedPfm);
  const auto dir = scratch("pfm");
  write_pfm(Grid(GridSpec{3, 3, 0, 0, 1}, 1.0), dir / "g.pfm");
  EXPECT_EQ(kind_of([&] { read_pfm(dir / "g.pfm", GridSpec{4, 3, 0, 0, 1}); }), ErrorKind::SpecMismatch);
}

TEST(Pfm, BigEndianAccepted) {
  std::string bytes = "Pf\n1 1\n1.0\n";
  const float v = 3.5f;
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<char>((bits >> s) & 0xFF));
  EXPECT_EQ(parse_pfm(bytes).values[0], 3.5);
}

TEST(Ppm, TopRowFirst) {
  RgbGrid g(GridSpec{1, 2, 0, 0, 1});
  g.at(0, 1) = {1, 0, 0};
  const std::string bytes = format_ppm(g);
  EXPECT_EQ(bytes.substr(0, 11), "P6\n1 2\n255\n");
  EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 255);
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 0);
  EXPECT_EQ(kind_of([] { parse_ppm("P3\n1 1\n255\n"); }), ErrorKind::MalformedPpm);
  EXPECT_EQ(kind_of([] { parse_ppm("P6\n2 2\n255\nabc"); }), ErrorKind::MalformedPpm);
}

TEST(Manifest, ParsesAndRejects) {
  const SceneManifest m = parse_manifest(kManifest);
  EXPECT_EQ(m.seed, 7u);
  EXPECT_EQ(m.grid, (GridSpec{4, 3, -1.5, -1.0, 1.0}));
  EXPECT_EQ(parse_manifest(format_manifest(m)), m);

  auto broken = [&](const std::string& from, const std::string& to) {
    std::string s = kManifest;
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  const std::string missing = broken("\"seed\": 7,", "");
  EXPECT_EQ(kind_of([&] { parse_manifest(missing); }), ErrorKind::MalformedManifest);
  EXPECT_NE(message_of([&] { parse_manifest(missing); }).find("seed"), std::string::npos);
  const std::string extra = broken("\"seed\": 7,", "\"seed\": 7, \"colour\": 1,");
  EXPECT_NE(message_of([&] { parse_manifest(extra); }).find("colour"), std::string::npos);
  const std::string wrong_type = broken("\"width\": 4", "\"width\": \"4\"");
  EXPECT_NE(message_of([&] { parse_manifest(wrong_type); }).find("grid.width"), std::string::npos);
  const std::string bad_sun = broken("\"elevation_deg\": 55.0", "\"elevation_deg\": 95.0");
  EXPECT_NE(message_of([&] { parse_manifest(bad_sun); }).find("sun.elevation_deg"), std::string::npos);
  EXPECT_EQ(kind_of([] { parse_manifest("{not json"); }), ErrorKind::MalformedManifest);
}

TEST(Scene, WriteReadKeepsEverything) {
  SceneConfig cfg;
  cfg.grid = GridSpec::centered(40, 40, 0.5);
  cfg.ranges.n_points = {2000, 2000};
  const SceneSample s = generate_scene(11, cfg);
  const auto dir = scratch("scene");
  write_scene(s, dir);
  const SceneSample r = read_scene(dir);
  EXPECT_EQ(r.seed, s.seed);
  EXPECT_EQ(r.grid, s.grid);
  EXPECT_EQ(r.sun, s.sun);
  for (std::size_t i = 0; i < s.dsm.values.size(); ++i) EXPECT_EQ(r.dsm.values[i], roundtrip::as_float(s.dsm.values[i]));
  EXPECT_EQ(r.silhouette, s.silhouette);
  EXPECT_EQ(r.shadow, s.shadow);
  EXPECT_EQ(r.cloud.size(), s.cloud.size());
  EXPECT_EQ(*r.cloud.classes, *s.cloud.classes);

  // a second write of the loaded scene reproduces the bytes
  const auto dir2 = scratch("scene2");
  write_scene(r, dir2);
  for (const char* f : {"manifest.json", "ortho.ppm", "dsm.pfm", "silhouette.pfm", "shadow.pfm", "gt.ply"})
    EXPECT_EQ(detail::read_file(dir / f), detail::read_file(dir2 / f)) << f;
}
