#pragma once

// File formats. Layouts are byte-exact and deterministic:
//
// PLY (ASCII 1.0). Header lines, in order:
//   ply / format ascii 1.0 / element vertex N / property float x|y|z /
//   [property uchar red|green|blue] / [property uchar class] / end_header
// then one line per vertex, fields separated by single spaces. Positions
// are written as float32 with %.9g; colors as round-half-up(c * 255);
// class is 0 for trunk and 1 for foliage.
//
// PFM: "Pf\n<w> <h>\n-1.0\n" followed by w*h little-endian float32 values,
// bottom row first. Row v = 0 is the bottom (southernmost) row, so grid rows
// are written in storage order. Values are quantized to float32.
//
// PPM: "P6\n<w> <h>\n255\n" followed by RGB bytes, top row first, i.e. row
// v = height - 1 is written first. Channels use the PLY color rounding.
//
// Manifest: JSON object with exactly the keys seed, grid {width, height,
// origin_x, origin_y, pixel_size}, sun {azimuth_deg, elevation_deg}, files
// {ortho, dsm, silhouette, shadow, cloud} and generator_version. Rasters
// carry no georeference; the manifest does.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "canopy/core.hpp"
#include "canopy/protree.hpp"

namespace canopy {

inline constexpr const char* kGeneratorVersion = "canopy-protree/1";

/// Round-half-up to [0, 255].
inline std::uint8_t to_uchar(double c) {
  const double scaled = std::floor(std::clamp(c, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

inline double from_uchar(std::uint8_t c) { return static_cast<double>(c) / 255.0; }

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

/// Header tokens of a PNM-style file; returns the offset of the byte after
/// the single whitespace that terminates the last token.
inline std::size_t pnm_header(std::string_view data, std::size_t n_tokens, std::vector<std::string>& tokens,
                              ErrorKind err) {
  std::size_t i = 0;
  while (tokens.size() < n_tokens) {
    while (i < data.size()) {
      if (data[i] == '#') {
        while (i < data.size() && data[i] != '\n') ++i;
      } else if (std::isspace(static_cast<unsigned char>(data[i]))) {
        ++i;
      } else {
        break;
      }
    }
    std::size_t j = i;
    while (j < data.size() && !std::isspace(static_cast<unsigned char>(data[j]))) ++j;
    if (j == i) throw Error(err, "truncated header");
    tokens.emplace_back(data.substr(i, j - i));
    i = j;
  }
  if (i >= data.size()) throw Error(err, "missing payload after header");
  return i + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PLY

inline std::string format_ply(const PointCloud& cloud) {
  if (!cloud.valid()) throw Error(ErrorKind::InvalidConfig, "cloud violates its size or finiteness invariants");
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  if (cloud.colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.classes) out += "property uchar class\n";
  out += "end_header\n";
  char buf[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    int n = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", static_cast<double>(static_cast<float>(p.x)),
                          static_cast<double>(static_cast<float>(p.y)), static_cast<double>(static_cast<float>(p.z)));
    out.append(buf, static_cast<std::size_t>(n));
    if (cloud.colors) {
      const auto& c = (*cloud.colors)[i];
      n = std::snprintf(buf, sizeof(buf), " %u %u %u", to_uchar(c.r), to_uchar(c.g), to_uchar(c.b));
      out.append(buf, static_cast<std::size_t>(n));
    }
    if (cloud.classes) out += (*cloud.classes)[i] == PointClass::Trunk ? " 0" : " 1";
    out += '\n';
  }
  return out;
}

inline PointCloud parse_ply(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };
  auto fail = [&](const std::string& what) -> Error {
    return Error(ErrorKind::MalformedPly, "line " + std::to_string(line_no) + ": " + what);
  };

  std::string_view line;
  if (!next_line(line) || line != "ply") throw fail("expected 'ply' magic");
  if (!next_line(line) || detail::split_ws(line) != std::vector<std::string_view>{"format", "ascii", "1.0"})
    throw fail("only 'format ascii 1.0' is supported");

  enum class Field { X, Y, Z, Red, Green, Blue, Class };
  std::vector<Field> fields;
  std::size_t n_vertices = 0;
  bool saw_vertex = false;
  bool ended = false;
  while (next_line(line)) {
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") {
      ended = true;
      break;
    }
    if (tok[0] == "element") {
      if (tok.size() != 3 || tok[1] != "vertex" || saw_vertex) throw fail("only a single 'element vertex N' is supported");
      if (!detail::parse_number(tok[2], n_vertices)) throw fail("bad vertex count");
      saw_vertex = true;
      continue;
    }
    if (tok[0] == "property") {
      if (!saw_vertex) throw fail("property before element");
      if (tok.size() != 3) throw fail("expected 'property <type> <name>'");
      const bool is_float = tok[1] == "float" || tok[1] == "float32" || tok[1] == "double" || tok[1] == "float64";
      const bool is_uchar = tok[1] == "uchar" || tok[1] == "uint8";
      if (tok[2] == "x" && is_float) fields.push_back(Field::X);
      else if (tok[2] == "y" && is_float) fields.push_back(Field::Y);
      else if (tok[2] == "z" && is_float) fields.push_back(Field::Z);
      else if (tok[2] == "red" && is_uchar) fields.push_back(Field::Red);
      else if (tok[2] == "green" && is_uchar) fields.push_back(Field::Green);
      else if (tok[2] == "blue" && is_uchar) fields.push_back(Field::Blue);
      else if (tok[2] == "class" && is_uchar) fields.push_back(Field::Class);
      else throw fail("unsupported property '" + std::string(tok[2]) + "' of type " + std::string(tok[1]));
      continue;
    }
    throw fail("unexpected header line");
  }
  if (!ended) throw fail("missing end_header");
  if (!saw_vertex) throw fail("missing 'element vertex'");

  auto count = [&](Field f) { return std::count(fields.begin(), fields.end(), f); };
  for (Field f : {Field::X, Field::Y, Field::Z, Field::Red, Field::Green, Field::Blue, Field::Class})
    if (count(f) > 1) throw fail("duplicate property");
  if (count(Field::X) != 1 || count(Field::Y) != 1 || count(Field::Z) != 1) throw fail("x, y and z are required");
  const auto n_color = count(Field::Red) + count(Field::Green) + count(Field::Blue);
  if (n_color != 0 && n_color != 3) throw fail("red, green and blue must appear together");

  PointCloud cloud;
  cloud.positions.resize(n_vertices);
  if (n_color == 3) cloud.colors.emplace(n_vertices);
  if (count(Field::Class)) cloud.classes.emplace(n_vertices);

  for (std::size_t i = 0; i < n_vertices; ++i) {
    if (!next_line(line)) throw fail("expected " + std::to_string(n_vertices) + " vertices, got " + std::to_string(i));
    const auto tok = detail::split_ws(line);
    if (tok.size() != fields.size()) throw fail("wrong number of values");
    for (std::size_t k = 0; k < fields.size(); ++k) {
      const Field f = fields[k];
      if (f == Field::X || f == Field::Y || f == Field::Z) {
        float v = 0.0f;
        if (!detail::parse_number(tok[k], v) || !std::isfinite(v)) throw fail("bad coordinate");
        double& dst = f == Field::X ? cloud.positions[i].x : f == Field::Y ? cloud.positions[i].y : cloud.positions[i].z;
        dst = v;
      } else {
        unsigned v = 0;
        if (!detail::parse_number(tok[k], v) || v > 255) throw fail("bad uchar value");
        if (f == Field::Class) {
          if (v > 1) throw fail("class must be 0 (trunk) or 1 (foliage)");
          (*cloud.classes)[i] = v == 0 ? PointClass::Trunk : PointClass::Foliage;
        } else {
          Rgb& c = (*cloud.colors)[i];
          (f == Field::Red ? c.r : f == Field::Green ? c.g : c.b) = from_uchar(static_cast<std::uint8_t>(v));
        }
      }
    }
  }
  while (next_line(line))
    if (!detail::split_ws(line).empty()) throw fail("trailing data after vertices");
  return cloud;
}

inline void write_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  detail::write_file(path, format_ply(cloud));
}

inline PointCloud read_ply(const std::filesystem::path& path) { return parse_ply(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// PFM

inline std::string format_pfm(const Grid& grid) {
  std::string out = "Pf\n" + std::to_string(grid.width()) + " " + std::to_string(grid.height()) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + grid.values.size() * 4);
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(grid.values[i]));
    for (int b = 0; b < 4; ++b) out[header + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

/// Decodes a PFM. The returned spec has the file's size with a unit pixel at
/// the origin; use the overload taking a GridSpec to attach a georeference.
inline Grid parse_pfm(std::string_view data) {
  std::vector<std::string> tok;
  const std::size_t offset = detail::pnm_header(data, 4, tok, ErrorKind::MalformedPfm);
  if (tok[0] != "Pf") throw Error(ErrorKind::MalformedPfm, "expected grayscale 'Pf' magic, got '" + tok[0] + "'");
  int w = 0, h = 0;
  double scale = 0.0;
  if (!detail::parse_number(std::string_view(tok[1]), w) || !detail::parse_number(std::string_view(tok[2]), h) ||
      w < 1 || h < 1)
    throw Error(ErrorKind::MalformedPfm, "bad dimensions");
  if (!detail::parse_number(std::string_view(tok[3]), scale) || scale == 0.0 || !std::isfinite(scale))
    throw Error(ErrorKind::MalformedPfm, "bad scale");
  const bool little = scale < 0.0;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (data.size() - offset != n * 4)
    throw Error(ErrorKind::MalformedPfm, "expected " + std::to_string(n * 4) + " payload bytes, got " +
                                             std::to_string(data.size() - offset));
  Grid grid(GridSpec{w, h, 0.0, 0.0, 1.0}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      const auto byte = static_cast<std::uint32_t>(static_cast<unsigned char>(data[offset + 4 * i + b]));
      bits |= little ? byte << (8 * b) : byte << (8 * (3 - b));
    }
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw Error(ErrorKind::MalformedPfm, "non-finite value at index " + std::to_string(i));
    grid.values[i] = v;
  }
  return grid;
}

inline void write_pfm(const Grid& grid, const std::filesystem::path& path) {
  detail::write_file(path, format_pfm(grid));
}

inline Grid read_pfm(const std::filesystem::path& path) { return parse_pfm(detail::read_file(path)); }

/// Reads a PFM and attaches `spec`; the file's size must agree with it.
inline Grid read_pfm(const std::filesystem::path& path, const GridSpec& spec) {
  Grid grid = read_pfm(path);
  if (grid.width() != spec.width || grid.height() != spec.height)
    throw Error(ErrorKind::SpecMismatch, path.string() + " is " + std::to_string(grid.width()) + "x" +
                                             std::to_string(grid.height()) + ", expected " +
                                             std::to_string(spec.width) + "x" + std::to_string(spec.height));
  grid.spec = spec;
  return grid;
}

// ---------------------------------------------------------------------------
// PPM

inline std::string format_ppm(const RgbGrid& grid) {
  std::string out = "P6\n" + std::to_string(grid.width()) + " " + std::to_string(grid.height()) + "\n255\n";
  out.reserve(out.size() + grid.values.size() * 3);
  for (int v = grid.height() - 1; v >= 0; --v) {
    for (int u = 0; u < grid.width(); ++u) {
      const Rgb& c = grid.at(u, v);
      out += static_cast<char>(to_uchar(c.r));
      out += static_cast<char>(to_uchar(c.g));
      out += static_cast<char>(to_uchar(c.b));
    }
  }
  return out;
}

inline RgbGrid parse_ppm(std::string_view data) {
  std::vector<std::string> tok;
  const std::size_t offset = detail::pnm_header(data, 4, tok, ErrorKind::MalformedPpm);
  if (tok[0] != "P6") throw Error(ErrorKind::MalformedPpm, "expected binary 'P6' magic, got '" + tok[0] + "'");
  int w = 0, h = 0, maxval = 0;
  if (!detail::parse_number(std::string_view(tok[1]), w) || !detail::parse_number(std::string_view(tok[2]), h) ||
      w < 1 || h < 1)
    throw Error(ErrorKind::MalformedPpm, "bad dimensions");
  if (!detail::parse_number(std::string_view(tok[3]), maxval) || maxval != 255)
    throw Error(ErrorKind::MalformedPpm, "only maxval 255 is supported");
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (data.size() - offset != n * 3)
    throw Error(ErrorKind::MalformedPpm, "expected " + std::to_string(n * 3) + " payload bytes, got " +
                                             std::to_string(data.size() - offset));
  RgbGrid grid(GridSpec{w, h, 0.0, 0.0, 1.0});
  std::size_t k = offset;
  for (int v = h - 1; v >= 0; --v) {
    for (int u = 0; u < w; ++u) {
      Rgb& c = grid.at(u, v);
      c.r = from_uchar(static_cast<std::uint8_t>(data[k++]));
      c.g = from_uchar(static_cast<std::uint8_t>(data[k++]));
      c.b = from_uchar(static_cast<std::uint8_t>(data[k++]));
    }
  }
  return grid;
}

inline void write_ppm(const RgbGrid& grid, const std::filesystem::path& path) {
  detail::write_file(path, format_ppm(grid));
}

inline RgbGrid read_ppm(const std::filesystem::path& path) { return parse_ppm(detail::read_file(path)); }

inline RgbGrid read_ppm(const std::filesystem::path& path, const GridSpec& spec) {
  RgbGrid grid = read_ppm(path);
  if (grid.width() != spec.width || grid.height() != spec.height)
    throw Error(ErrorKind::SpecMismatch, path.string() + " size disagrees with the grid spec");
  grid.spec = spec;
  return grid;
}

// ---------------------------------------------------------------------------
// Manifest

struct SceneFiles {
  std::string ortho = "ortho.ppm";
  std::string dsm = "dsm.pfm";
  std::string silhouette = "silhouette.pfm";
  std::string shadow = "shadow.pfm";
  std::string cloud = "gt.ply";
  friend bool operator==(const SceneFiles&, const SceneFiles&) = default;
};

struct SceneManifest {
  std::uint64_t seed = 0;
  GridSpec grid;
  SunConfig sun;
  SceneFiles files;
  std::string generator_version = kGeneratorVersion;
  friend bool operator==(const SceneManifest&, const SceneManifest&) = default;
};

inline std::string format_manifest(const SceneManifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["grid"] = {{"width", m.grid.width},
               {"height", m.grid.height},
               {"origin_x", m.grid.origin_x},
               {"origin_y", m.grid.origin_y},
               {"pixel_size", m.grid.pixel_size}};
  j["sun"] = {{"azimuth_deg", m.sun.azimuth_deg}, {"elevation_deg", m.sun.elevation_deg}};
  j["files"] = {{"ortho", m.files.ortho},
                {"dsm", m.files.dsm},
                {"silhouette", m.files.silhouette},
                {"shadow", m.files.shadow},
                {"cloud", m.files.cloud}};
  j["generator_version"] = m.generator_version;
  return j.dump(2) + "\n";
}

namespace detail {

inline const nlohmann::json& require_object(const nlohmann::json& j, const std::string& name,
                                            std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw Error(ErrorKind::MalformedManifest, "'" + name + "' must be an object");
  const std::string prefix = name.empty() ? "" : name + ".";
  for (const char* k : keys)
    if (!j.contains(k)) throw Error(ErrorKind::MalformedManifest, "missing field '" + prefix + k + "'");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw Error(ErrorKind::MalformedManifest, "unknown field '" + prefix + k + "'");
  return j;
}

inline double manifest_number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw Error(ErrorKind::MalformedManifest, "field '" + path + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw Error(ErrorKind::MalformedManifest, "field '" + path + "' must be finite");
  return v;
}

inline int manifest_int(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 1 || j.get<std::int64_t>() > (1 << 20))
    throw Error(ErrorKind::MalformedManifest, "field '" + path + "' must be a positive integer");
  return static_cast<int>(j.get<std::int64_t>());
}

inline std::string manifest_string(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) throw Error(ErrorKind::MalformedManifest, "field '" + path + "' must be a string");
  return j.get<std::string>();
}

}  // namespace detail

inline SceneManifest parse_manifest(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::MalformedManifest, std::string("invalid JSON: ") + e.what());
  }
  detail::require_object(j, "", {"seed", "grid", "sun", "files", "generator_version"});
  SceneManifest m;
  if (!j["seed"].is_number_unsigned()) throw Error(ErrorKind::MalformedManifest, "field 'seed' must be an unsigned integer");
  m.seed = j["seed"].get<std::uint64_t>();

  const auto& g = detail::require_object(j["grid"], "grid", {"width", "height", "origin_x", "origin_y", "pixel_size"});
  m.grid.width = detail::manifest_int(g["width"], "grid.width");
  m.grid.height = detail::manifest_int(g["height"], "grid.height");
  m.grid.origin_x = detail::manifest_number(g["origin_x"], "grid.origin_x");
  m.grid.origin_y = detail::manifest_number(g["origin_y"], "grid.origin_y");
  m.grid.pixel_size = detail::manifest_number(g["pixel_size"], "grid.pixel_size");
  if (!(m.grid.pixel_size > 0.0)) throw Error(ErrorKind::MalformedManifest, "field 'grid.pixel_size' must be positive");

  const auto& s = detail::require_object(j["sun"], "sun", {"azimuth_deg", "elevation_deg"});
  m.sun.azimuth_deg = detail::manifest_number(s["azimuth_deg"], "sun.azimuth_deg");
  m.sun.elevation_deg = detail::manifest_number(s["elevation_deg"], "sun.elevation_deg");
  if (!(m.sun.elevation_deg > 0.0 && m.sun.elevation_deg <= 90.0))
    throw Error(ErrorKind::MalformedManifest, "field 'sun.elevation_deg' must lie in (0, 90]");

  const auto& f = detail::require_object(j["files"], "files", {"ortho", "dsm", "silhouette", "shadow", "cloud"});
  m.files.ortho = detail::manifest_string(f["ortho"], "files.ortho");
  m.files.dsm = detail::manifest_string(f["dsm"], "files.dsm");
  m.files.silhouette = detail::manifest_string(f["silhouette"], "files.silhouette");
  m.files.shadow = detail::manifest_string(f["shadow"], "files.shadow");
  m.files.cloud = detail::manifest_string(f["cloud"], "files.cloud");
  m.generator_version = detail::manifest_string(j["generator_version"], "generator_version");
  return m;
}

inline void write_manifest(const SceneManifest& m, const std::filesystem::path& path) {
  detail::write_file(path, format_manifest(m));
}

inline SceneManifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Scene directories

inline void write_scene(const SceneSample& scene, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
  SceneManifest m;
  m.seed = scene.seed;
  m.grid = scene.grid;
  m.sun = scene.sun;
  write_ppm(scene.ortho, dir / m.files.ortho);
  write_pfm(scene.dsm, dir / m.files.dsm);
  write_pfm(scene.silhouette, dir / m.files.silhouette);
  write_pfm(scene.shadow, dir / m.files.shadow);
  write_ply(scene.cloud, dir / m.files.cloud);
  write_manifest(m, dir / "manifest.json");
}

/// Loads a scene directory written by write_scene; rasters take the
/// manifest's georeference.
inline SceneSample read_scene(const std::filesystem::path& dir) {
  const SceneManifest m = read_manifest(dir / "manifest.json");
  SceneSample scene;
  scene.seed = m.seed;
  scene.grid = m.grid;
  scene.sun = m.sun;
  scene.ortho = read_ppm(dir / m.files.ortho, m.grid);
  scene.dsm = read_pfm(dir / m.files.dsm, m.grid);
  scene.silhouette = read_pfm(dir / m.files.silhouette, m.grid);
  scene.shadow = read_pfm(dir / m.files.shadow, m.grid);
  scene.cloud = read_ply(dir / m.files.cloud);
  return scene;
}

}  // namespace canopy
