#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage, 2 I/O, 3 empty or
// degenerate input, 4 input mismatch, 5 internal check failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "canopy/core.hpp"
#include "canopy/gradcheck.hpp"
#include "canopy/io.hpp"
#include "canopy/metrics.hpp"
#include "canopy/protree.hpp"
#include "canopy/reconstruct.hpp"

namespace canopy::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kEmpty = 3, kMismatch = 4, kCheckFailed = 5 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::MalformedPly:
    case ErrorKind::MalformedPfm:
    case ErrorKind::MalformedPpm:
    case ErrorKind::MalformedManifest: return kIo;
    case ErrorKind::EmptyCloud:
    case ErrorKind::EmptyFootprint: return kEmpty;
    case ErrorKind::SpecMismatch:
    case ErrorKind::MissingTarget:
    case ErrorKind::MissingColors:
    case ErrorKind::InvalidSun: return kMismatch;
    case ErrorKind::InvalidConfig: return kUsage;
  }
  return kUsage;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string scene_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

/// Runs fn(i) for i in [0, n) on `jobs` threads; results are index-addressed
/// so output order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct GenerateArgs {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string out;
  int grid_size = 128;
  double pixel_size = 0.25;
  double sun_az = SunConfig{}.azimuth_deg;
  double sun_el = SunConfig{}.elevation_deg;
  int points_per_tree = TreeRanges{}.n_points.lo;
  int jobs = 1;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  SceneConfig cfg;
  cfg.grid = GridSpec::centered(a.grid_size, a.grid_size, a.pixel_size);
  cfg.sun = {a.sun_az, a.sun_el};
  cfg.ranges.n_points = {a.points_per_tree, a.points_per_tree};
  require_valid(cfg.grid);
  require_valid(cfg.sun);

  const std::filesystem::path root(a.out);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + root.string() + ": " + ec.message());

  std::vector<std::string> lines(a.count);
  parallel_for(a.count, a.jobs, [&](std::size_t i) {
    const std::uint64_t seed = a.seed + i;
    const SceneSample scene = generate_scene(seed, cfg);
    write_scene(scene, root / scene_dir_name(i));
    std::size_t crown = 0;
    for (double v : scene.silhouette.values) crown += v > 0.0 ? 1 : 0;
    double top = 0.0;
    for (const auto& p : scene.cloud.positions) top = std::max(top, p.z);
    lines[i] = scene_dir_name(i) + " seed=" + std::to_string(seed) + " points=" + std::to_string(scene.cloud.size()) +
               " height=" + fmt_double(top) + " crown_pixels=" + std::to_string(crown);
  });
  for (const auto& l : lines) out << l << '\n';
  return kOk;
}

struct ReconstructArgs {
  std::string ortho, dsm, manifest, shadow, gt, out;
  int iters = 800;
  int points = 2000;
  double lr = AdamParams{}.lr;
  std::optional<double> lambda_geo, lambda_sil, lambda_shadow, lambda_dsm;
  std::uint64_t seed = 0;
  double h_min = 0.5;
  int log_every = 10;
  std::optional<double> sun_az, sun_el;
  double pixel_size = 0.25;
};

inline std::filesystem::path history_path(const std::filesystem::path& ply) {
  std::filesystem::path p = ply;
  p.replace_extension();
  p += ".history.csv";
  return p;
}

inline std::string format_history(const std::vector<LossRecord>& history) {
  std::string csv = "iter,total,geo,sil,shadow,dsm\n";
  for (const auto& r : history) {
    csv += std::to_string(r.iter) + "," + fmt_double(r.total) + "," + fmt_double(r.breakdown.geo) + "," +
           fmt_double(r.breakdown.sil) + "," + fmt_double(r.breakdown.shadow) + "," + fmt_double(r.breakdown.dsm) +
           "\n";
  }
  return csv;
}

inline int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out) {
  std::optional<SceneManifest> manifest;
  if (!a.manifest.empty()) manifest = read_manifest(a.manifest);

  ReconInputs in;
  if (manifest) {
    in.ortho = read_ppm(a.ortho, manifest->grid);
    in.dsm = read_pfm(a.dsm, manifest->grid);
  } else {
    in.ortho = read_ppm(a.ortho);
    const GridSpec spec = GridSpec::centered(in.ortho.width(), in.ortho.height(), a.pixel_size);
    in.ortho.spec = spec;
    in.dsm = read_pfm(a.dsm, spec);
  }
  const GridSpec spec = in.dsm.spec;

  // Flags override the manifest.
  if (manifest) in.sun = manifest->sun;
  if (a.sun_az || a.sun_el) {
    SunConfig sun = in.sun.value_or(SunConfig{});
    if (a.sun_az) sun.azimuth_deg = *a.sun_az;
    if (a.sun_el) sun.elevation_deg = *a.sun_el;
    in.sun = sun;
  }
  if (!a.shadow.empty()) in.shadow = read_pfm(a.shadow, spec);
  if (!a.gt.empty()) in.gt_cloud = read_ply(a.gt);

  OptimConfig cfg;
  cfg.n_points = a.points;
  cfg.iters = a.iters;
  cfg.adam.lr = a.lr;
  cfg.seed = a.seed;
  cfg.h_min = a.h_min;
  cfg.log_every = a.log_every;
  // Terms whose inputs were not supplied default to off.
  cfg.weights.geo = a.lambda_geo.value_or(in.gt_cloud ? LossWeights{}.geo : 0.0);
  cfg.weights.sil = a.lambda_sil.value_or(LossWeights{}.sil);
  cfg.weights.shadow = a.lambda_shadow.value_or(in.shadow && in.sun ? LossWeights{}.shadow : 0.0);
  cfg.weights.dsm = a.lambda_dsm.value_or(LossWeights{}.dsm);

  const ReconResult result = reconstruct(in, cfg);
  write_ply(result.cloud, a.out);
  detail::write_file(history_path(a.out), format_history(result.loss_history));

  const auto& first = result.loss_history.front();
  const auto& last = result.loss_history.back();
  out << "initial total=" << fmt_double(first.total) << "\n";
  out << "final total=" << fmt_double(last.total) << " geo=" << fmt_double(last.breakdown.geo)
      << " sil=" << fmt_double(last.breakdown.sil) << " shadow=" << fmt_double(last.breakdown.shadow)
      << " dsm=" << fmt_double(last.breakdown.dsm) << "\n";
  if (result.final_metrics) out << format_report(*result.final_metrics) << "\n";
  return kOk;
}

inline int cmd_eval(const std::string& pred_path, const std::string& gt_path, double tau, std::ostream& out) {
  const PointCloud pred = read_ply(pred_path);
  const PointCloud gt = read_ply(gt_path);
  out << format_report(evaluate(pred, gt, tau)) << "\n";
  return kOk;
}

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(opt);
  for (std::size_t k = 0; k < kGradClasses.size(); ++k)
    out << to_string(kGradClasses[k]) << " max_rel_err=" << fmt_double(report.max_error[k]) << "\n";
  out << "gradcheck " << (report.passed() ? "PASS" : "FAIL") << " trials=" << report.trials
      << " components=" << report.components << " tol=" << fmt_double(kGradRelTol) << "\n";
  return report.passed() ? kOk : kCheckFailed;
}

struct BenchArgs {
  std::string dataset;
  std::string out;  // default <dataset>/bench.csv
  double tau = kDefaultTau;
  int iters = 800;
  int points = 2000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct BenchRow {
  std::string scene;
  std::string method;
  EvalReport report;
};

inline std::vector<std::filesystem::path> list_scenes(const std::filesystem::path& root) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) throw Error(ErrorKind::Io, root.string() + " is not a directory");
  std::vector<std::filesystem::path> scenes;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0 &&
        std::filesystem::exists(entry.path() / "manifest.json"))
      scenes.push_back(entry.path());
  }
  std::sort(scenes.begin(), scenes.end());
  return scenes;
}

/// Reconstruction from orthophoto, DSM, sun and shadow only, next to the
/// surface-extrusion baseline, both scored against the stored ground truth.
inline std::vector<BenchRow> run_bench(const BenchArgs& a, std::vector<std::string>* log = nullptr) {
  const auto scenes = list_scenes(a.dataset);
  std::vector<std::array<BenchRow, 2>> rows(scenes.size());
  std::vector<std::string> lines(scenes.size());
  parallel_for(scenes.size(), a.jobs, [&](std::size_t i) {
    const SceneSample scene = read_scene(scenes[i]);
    const std::string name = scenes[i].filename().string();

    OptimConfig cfg;
    cfg.n_points = a.points;
    cfg.iters = a.iters;
    cfg.seed = a.seed;
    cfg.weights.geo = 0.0;
    ReconInputs in{scene.ortho, scene.dsm, scene.sun, scene.shadow, std::nullopt};
    const ReconResult recon = reconstruct(in, cfg);

    const DerivedTargets targets = derive_targets(scene.ortho, scene.dsm, cfg.h_min);
    Rng rng(a.seed);
    const PointCloud baseline = baseline_extrude(scene.dsm, targets.silhouette, scene.ortho, a.points, rng);

    rows[i][0] = {name, "reconstruct", evaluate(recon.cloud, scene.cloud, a.tau)};
    rows[i][1] = {name, "baseline", evaluate(baseline, scene.cloud, a.tau)};
    lines[i] = name + " loss " + fmt_double(recon.loss_history.front().total) + " -> " +
               fmt_double(recon.loss_history.back().total) + " recall reconstruct=" +
               fmt_double(rows[i][0].report.score.recall) + " baseline=" + fmt_double(rows[i][1].report.score.recall);
  });
  std::vector<BenchRow> flat;
  for (auto& r : rows) {
    flat.push_back(r[0]);
    flat.push_back(r[1]);
  }
  if (log) *log = std::move(lines);
  return flat;
}

inline std::string format_bench_csv(const std::vector<BenchRow>& rows) {
  std::string csv = "scene,method,chamfer,precision,recall,fscore\n";
  for (const auto& r : rows)
    csv += r.scene + "," + r.method + "," + fmt_double(r.report.chamfer) + "," + fmt_double(r.report.score.precision) +
           "," + fmt_double(r.report.score.recall) + "," + fmt_double(r.report.score.f) + "\n";
  return csv;
}

inline int cmd_bench(const BenchArgs& a, std::ostream& out) {
  std::vector<std::string> log;
  const auto rows = run_bench(a, &log);
  const std::filesystem::path csv_path =
      a.out.empty() ? std::filesystem::path(a.dataset) / "bench.csv" : std::filesystem::path(a.out);
  detail::write_file(csv_path, format_bench_csv(rows));
  for (const auto& l : log) out << l << "\n";
  for (const char* method : {"reconstruct", "baseline"}) {
    double chamfer = 0.0, precision = 0.0, recall = 0.0, f = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      chamfer += r.report.chamfer;
      precision += r.report.score.precision;
      recall += r.report.score.recall;
      f += r.report.score.f;
      ++n;
    }
    const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
    out << "mean " << method << " scenes=" << n << " chamfer=" << fmt_double(chamfer * inv)
        << " precision=" << fmt_double(precision * inv) << " recall=" << fmt_double(recall * inv)
        << " fscore=" << fmt_double(f * inv) << "\n";
  }
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Tree point clouds from an orthophoto and a DSM by differentiable rendering"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset of procedural tree scenes");
  generate->add_option("--count", gen.count, "Number of scenes")->required();
  generate->add_option("--seed", gen.seed, "Seed of scene 0; scene i uses seed + i")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--grid-size", gen.grid_size, "Raster width and height in pixels")->capture_default_str();
  generate->add_option("--pixel-size", gen.pixel_size, "Meters per pixel")->capture_default_str();
  generate->add_option("--sun-az", gen.sun_az, "Sun azimuth, degrees clockwise from north")->capture_default_str();
  generate->add_option("--sun-el", gen.sun_el, "Sun elevation, degrees in (0, 90]")->capture_default_str();
  generate->add_option("--points-per-tree", gen.points_per_tree, "Ground-truth points per tree")->capture_default_str();
  generate->add_option("--jobs", gen.jobs, "Worker threads")->capture_default_str();

  ReconstructArgs rec;
  double lambda_geo = 0, lambda_sil = 0, lambda_shadow = 0, lambda_dsm = 0, sun_az = 0, sun_el = 0;
  auto* reconstruct_cmd = app.add_subcommand("reconstruct", "Optimize a point cloud against an orthophoto and DSM");
  reconstruct_cmd->add_option("--ortho", rec.ortho, "Orthophoto (P6 PPM)")->required();
  reconstruct_cmd->add_option("--dsm", rec.dsm, "Digital surface model (PFM)")->required();
  reconstruct_cmd->add_option("--manifest", rec.manifest, "Scene manifest supplying grid and sun");
  reconstruct_cmd->add_option("--shadow", rec.shadow, "Shadow mask (PFM)");
  reconstruct_cmd->add_option("--gt", rec.gt, "Ground-truth cloud (PLY) for geometric supervision");
  reconstruct_cmd->add_option("--out", rec.out, "Output PLY; history goes to <out>.history.csv")->required();
  reconstruct_cmd->add_option("--iters", rec.iters, "Adam iterations")->capture_default_str();
  reconstruct_cmd->add_option("--points", rec.points, "Number of points")->capture_default_str();
  reconstruct_cmd->add_option("--lr", rec.lr, "Adam learning rate (m)")->capture_default_str();
  auto* o_geo = reconstruct_cmd->add_option("--lambda-geo", lambda_geo, "Chamfer weight (default 1 with --gt, else 0)");
  auto* o_sil = reconstruct_cmd->add_option("--lambda-sil", lambda_sil, "Silhouette weight (default 1)");
  auto* o_shadow =
      reconstruct_cmd->add_option("--lambda-shadow", lambda_shadow, "Shadow weight (default 0.5 with --shadow, else 0)");
  auto* o_dsm = reconstruct_cmd->add_option("--lambda-dsm", lambda_dsm, "DSM weight (default 1)");
  reconstruct_cmd->add_option("--seed", rec.seed, "Initialization seed")->capture_default_str();
  reconstruct_cmd->add_option("--h-min", rec.h_min, "Crown height threshold (m)")->capture_default_str();
  reconstruct_cmd->add_option("--log-every", rec.log_every, "History interval")->capture_default_str();
  auto* o_az = reconstruct_cmd->add_option("--sun-az", sun_az, "Sun azimuth (overrides manifest)");
  auto* o_el = reconstruct_cmd->add_option("--sun-el", sun_el, "Sun elevation (overrides manifest)");
  reconstruct_cmd->add_option("--pixel-size", rec.pixel_size, "Meters per pixel when no manifest is given")
      ->capture_default_str();

  std::string pred_path, gt_path;
  double tau = kDefaultTau;
  auto* eval = app.add_subcommand("eval", "Chamfer distance and F-score of a prediction");
  eval->add_option("--pred", pred_path, "Predicted cloud (PLY)")->required();
  eval->add_option("--gt", gt_path, "Ground-truth cloud (PLY)")->required();
  eval->add_option("--tau", tau, "Match distance (m)")->capture_default_str();

  GradcheckOptions gc;
  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  gradcheck->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  gradcheck->add_option("--points", gc.points, "Points per trial (0: random 20-50)")->capture_default_str();
  gradcheck->add_option("--trials", gc.trials, "Number of random trials")->capture_default_str();
  gradcheck->add_flag("--corrupt-gradient", corrupt, "Scale analytic gradients by 1.01")->group("");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Reconstruct every scene and compare with the DSM-extrusion baseline");
  bench_cmd->add_option("--dataset", bench.dataset, "Directory of scene_* folders")->required();
  bench_cmd->add_option("--out", bench.out, "CSV path (default <dataset>/bench.csv)");
  bench_cmd->add_option("--tau", bench.tau, "Match distance (m)")->capture_default_str();
  bench_cmd->add_option("--iters", bench.iters, "Adam iterations")->capture_default_str();
  bench_cmd->add_option("--points", bench.points, "Points per reconstruction")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Initialization seed")->capture_default_str();
  bench_cmd->add_option("--jobs", bench.jobs, "Worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return cmd_generate(gen, out);
    if (*reconstruct_cmd) {
      if (o_geo->count()) rec.lambda_geo = lambda_geo;
      if (o_sil->count()) rec.lambda_sil = lambda_sil;
      if (o_shadow->count()) rec.lambda_shadow = lambda_shadow;
      if (o_dsm->count()) rec.lambda_dsm = lambda_dsm;
      if (o_az->count()) rec.sun_az = sun_az;
      if (o_el->count()) rec.sun_el = sun_el;
      return cmd_reconstruct(rec, out);
    }
    if (*eval) return cmd_eval(pred_path, gt_path, tau, out);
    if (*gradcheck) {
      if (corrupt) gc.corrupt_scale = 1.01;
      return cmd_gradcheck(gc, out);
    }
    if (*bench_cmd) return cmd_bench(bench, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}

}  // namespace canopy::cli
