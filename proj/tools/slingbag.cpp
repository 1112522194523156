// Command-line front end chaining phantom generation, forward simulation,
// iterative and back-projection reconstruction, voxelization, image
// rendering and image-quality metrics.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slingbag/baseline.hpp"
#include "slingbag/config.hpp"
#include "slingbag/io.hpp"
#include "slingbag/metrics.hpp"
#include "slingbag/model.hpp"
#include "slingbag/optimizer.hpp"
#include "slingbag/phantom.hpp"
#include "slingbag/radiator.hpp"
#include "slingbag/shader.hpp"

namespace {

using namespace slingbag;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  if (args.seed_override) {
    cfg.seed = *args.seed_override;
    cfg.init.rng_seed = *args.seed_override;
  }
  return cfg;
}

void write_progress_csv(const std::string& path,
                        const std::vector<std::tuple<std::size_t, double, std::size_t>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "iter,loss,n_points\n";
  char buf[40];
  for (const auto& [iter, loss, n] : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", loss);
    out << iter << "," << buf << "," << n << "\n";
  }
}

PointCloud run_reconstruct(const RunConfig& cfg, const SignalSet& obs, const SensorArray& array,
                           const std::string& log_path) {
  std::vector<std::tuple<std::size_t, double, std::size_t>> rows;
  ProgressSink sink = [&rows](std::size_t iter, double loss, std::size_t n) {
    rows.emplace_back(iter, loss, n);
  };
  PointCloud cloud =
      reconstruct(obs, array, cfg.medium, cfg.init, cfg.coarse, cfg.fine, cfg.radiator, sink);
  if (!log_path.empty()) write_progress_csv(log_path, rows);
  return cloud;
}

Mask threshold_mask(const Image2D& img, double threshold_frac, bool above) {
  const double max = img.values.empty()
                         ? 0.0
                         : *std::max_element(img.values.begin(), img.values.end());
  const double cut = threshold_frac * max;
  Mask m(img.rows, img.cols);
  for (std::size_t i = 0; i < img.values.size(); ++i)
    m.values[i] = (above ? img.values[i] >= cut : img.values[i] < cut) ? 1 : 0;
  return m;
}

struct MetricsReport {
  std::vector<std::pair<std::string, double>> rows;

  void add(const std::string& name, double value) { rows.emplace_back(name, value); }
  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "metric,value\n";
    char buf[40];
    for (const auto& [name, value] : rows) {
      std::snprintf(buf, sizeof buf, "%.17g", value);
      out << name << "," << buf << "\n";
    }
  }
};

// Compares a reconstruction against the reference volume on the chosen MAP:
// SSIM plus SNR/CNR with masks thresholded from the reference image. Masks
// are persisted next to the report so the scores are reproducible.
void score_against_truth(MetricsReport& report, const std::string& tag, const Image2D& recon_map,
                         const Image2D& truth_map, double mask_threshold,
                         const std::string& mask_dir) {
  report.add("ssim_map_" + tag, ssim(recon_map, truth_map));
  const Mask signal = threshold_mask(truth_map, mask_threshold, true);
  const Mask background = threshold_mask(truth_map, mask_threshold, false);
  if (signal.count() > 0 && background.count() > 0) {
    const RegionScore s = snr(recon_map, signal, background);
    const RegionScore c = cnr(recon_map, signal, background);
    report.add("snr_db_" + tag, s.value);
    report.add("cnr_" + tag, c.value);
  }
  if (!mask_dir.empty()) {
    write_mask_csv(mask_dir + "/mask_signal_" + tag + ".csv", signal);
    write_mask_csv(mask_dir + "/mask_background_" + tag + ".csv", background);
  }
}

int run_pipeline(const CommonArgs& common, const std::string& outdir) {
  const RunConfig cfg = load_config(common);
  std::filesystem::create_directories(outdir);
  const SensorArray array = build_sensor_array(cfg);

  const PointCloud truth = make_phantom(cfg.phantom, cfg.seed);
  write_cloud(outdir + "/phantom.sbpcd", truth);

  const SignalSet obs = forward(truth, array, cfg.medium, cfg.radiator);
  write_signals(outdir + "/signals.sbsig", obs);

  const PointCloud recon = run_reconstruct(cfg, obs, array, outdir + "/progress.csv");
  write_cloud(outdir + "/recon.sbpcd", recon);

  const VoxelGrid recon_grid = voxelize(recon, cfg.grid).grid;
  write_grid(outdir + "/recon.sbvox", recon_grid);
  const VoxelGrid truth_grid = voxelize(truth, cfg.grid).grid;
  write_grid(outdir + "/truth.sbvox", truth_grid);
  const UbpResult ubp = ubp_reconstruct(obs, array, cfg.grid, cfg.medium, cfg.ubp);
  write_grid(outdir + "/ubp.sbvox", ubp.grid);

  for (Axis axis : {Axis::X, Axis::Y, Axis::Z}) {
    const Image2D map = map_projection(recon_grid, axis);
    const std::string stem = outdir + "/recon_map_" + axis_name(axis);
    write_image_pgm16(stem + ".pgm", map);
    write_image_csv(stem + ".csv", map);
  }

  MetricsReport report;
  const Image2D truth_map = map_projection(truth_grid, Axis::Z);
  score_against_truth(report, "z_recon", map_projection(recon_grid, Axis::Z), truth_map,
                      cfg.mask_threshold, outdir);
  score_against_truth(report, "z_ubp", map_projection(ubp.grid, Axis::Z), truth_map,
                      cfg.mask_threshold, outdir);
  report.write(outdir + "/metrics.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud iterative 3D photoacoustic reconstruction"};
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    if (needs_config)
      sub->add_option("--config", common.config_path, "run configuration file")->required();
    sub->add_option("--seed", seed_value, "override the config rng seed");
  };

  // phantom
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic source cloud");
  std::string out_path, in_path, log_path;
  add_common(cmd_phantom);
  cmd_phantom->add_option("--out", out_path, "output cloud file")->required();

  // simulate
  auto* cmd_simulate = app.add_subcommand("simulate", "forward-simulate sensor signals");
  add_common(cmd_simulate);
  cmd_simulate->add_option("--cloud", in_path, "input cloud file")->required();
  cmd_simulate->add_option("--out", out_path, "output signal file")->required();

  // reconstruct
  auto* cmd_reconstruct = app.add_subcommand("reconstruct", "iterative reconstruction");
  add_common(cmd_reconstruct);
  cmd_reconstruct->add_option("--signals", in_path, "observed signal file")->required();
  cmd_reconstruct->add_option("--out", out_path, "output cloud file")->required();
  cmd_reconstruct->add_option("--log", log_path, "per-iteration progress csv");

  // ubp
  auto* cmd_ubp = app.add_subcommand("ubp", "universal back-projection baseline");
  add_common(cmd_ubp);
  cmd_ubp->add_option("--signals", in_path, "observed signal file")->required();
  cmd_ubp->add_option("--out", out_path, "output grid file")->required();

  // voxelize
  auto* cmd_voxelize = app.add_subcommand("voxelize", "convert a cloud to a voxel grid");
  add_common(cmd_voxelize);
  cmd_voxelize->add_option("--cloud", in_path, "input cloud file")->required();
  cmd_voxelize->add_option("--out", out_path, "output grid file")->required();

  // render
  auto* cmd_render = app.add_subcommand("render", "write a MAP or slice image from a grid");
  std::string axis_str = "z", csv_path;
  long long slice_index = -1;
  cmd_render->add_option("--grid", in_path, "input grid file")->required();
  cmd_render->add_option("--axis", axis_str, "projection/slice axis (x, y or z)");
  cmd_render->add_option("--slice-index", slice_index, "extract this slice instead of a MAP");
  cmd_render->add_option("--out", out_path, "output 16-bit pgm image")->required();
  cmd_render->add_option("--csv", csv_path, "also write an exact-value csv twin");

  // metrics
  auto* cmd_metrics = app.add_subcommand("metrics", "score a grid against a reference grid");
  std::string recon_path, truth_path;
  double mask_threshold = 0.1;
  cmd_metrics->add_option("--recon", recon_path, "reconstructed grid file")->required();
  cmd_metrics->add_option("--truth", truth_path, "reference grid file")->required();
  cmd_metrics->add_option("--axis", axis_str, "MAP axis (x, y or z)");
  cmd_metrics->add_option("--threshold", mask_threshold,
                          "signal mask threshold as a fraction of the reference max");
  cmd_metrics->add_option("--out", out_path, "metrics csv")->required();
  cmd_metrics->add_option("--maskdir", csv_path, "directory for the stored masks");

  // pipeline
  auto* cmd_pipeline = app.add_subcommand("pipeline", "full chain: phantom to metrics report");
  std::string outdir;
  add_common(cmd_pipeline);
  cmd_pipeline->add_option("--outdir", outdir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  for (const CLI::App* sub : app.get_subcommands()) {
    const CLI::Option* opt = sub->get_option_no_throw("--seed");
    if (opt && opt->count() > 0) common.seed_override = seed_value;
  }
  if (!in_path.empty() && in_path == out_path) {
    std::cerr << "error: input and output path are both '" << in_path << "'\n";
    return 1;
  }

  try {
    if (cmd_phantom->parsed()) {
      const RunConfig cfg = load_config(common);
      write_cloud(out_path, make_phantom(cfg.phantom, cfg.seed));
    } else if (cmd_simulate->parsed()) {
      const RunConfig cfg = load_config(common);
      const SensorArray array = build_sensor_array(cfg);
      const PointCloud cloud = read_cloud(in_path);
      write_signals(out_path, forward(cloud, array, cfg.medium, cfg.radiator));
    } else if (cmd_reconstruct->parsed()) {
      const RunConfig cfg = load_config(common);
      const SensorArray array = build_sensor_array(cfg);
      const SignalSet obs = read_signals(in_path);
      write_cloud(out_path, run_reconstruct(cfg, obs, array, log_path));
    } else if (cmd_ubp->parsed()) {
      const RunConfig cfg = load_config(common);
      const SensorArray array = build_sensor_array(cfg);
      const SignalSet obs = read_signals(in_path);
      write_grid(out_path, ubp_reconstruct(obs, array, cfg.grid, cfg.medium, cfg.ubp).grid);
    } else if (cmd_voxelize->parsed()) {
      const RunConfig cfg = load_config(common);
      write_grid(out_path, voxelize(read_cloud(in_path), cfg.grid).grid);
    } else if (cmd_render->parsed()) {
      const VoxelGrid grid = read_grid(in_path);
      const Axis axis = axis_from_string(axis_str);
      const Image2D img = slice_index >= 0
                              ? slice(grid, axis, static_cast<std::size_t>(slice_index))
                              : map_projection(grid, axis);
      write_image_pgm16(out_path, img);
      if (!csv_path.empty()) write_image_csv(csv_path, img);
    } else if (cmd_metrics->parsed()) {
      const VoxelGrid recon = read_grid(recon_path);
      const VoxelGrid truth = read_grid(truth_path);
      const Axis axis = axis_from_string(axis_str);
      MetricsReport report;
      score_against_truth(report, std::string(axis_name(axis)), map_projection(recon, axis),
                          map_projection(truth, axis), mask_threshold, csv_path);
      report.write(out_path);
    } else if (cmd_pipeline->parsed()) {
      return run_pipeline(common, outdir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
