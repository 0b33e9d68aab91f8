// Command-line front end: preprocess KITTI frames into an occlusion-tagged
// 4D dataset, export samples as PLY, and report dataset statistics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "occlusion/dataset.hpp"
#include "occlusion/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

namespace fs = std::filesystem;
using occlusion::pipeline::PipelineConfig;

void add_preprocess(CLI::App& app, PipelineConfig& cfg, std::string& scheme, bool& no_frustum) {
  auto* cmd = app.add_subcommand("preprocess", "Ray-cast occlusion points and export per-object samples");
  cmd->add_option("--points", cfg.points_dir, "Directory of <frame>.bin point files")->required();
  cmd->add_option("--labels", cfg.labels_dir, "Directory of <frame>.txt label files")->required();
  cmd->add_option("--calib", cfg.calib_dir, "Directory of <frame>.txt calibration files")->required();
  cmd->add_option("--out", cfg.output_dir, "Output dataset directory")->required();
  cmd->add_option("--step", cfg.occlusion.step_s, "Shadow step size s in meters")->capture_default_str();
  cmd->add_option("--max-range", cfg.occlusion.max_range, "Shadow ray range cap in meters")->capture_default_str();
  cmd->add_option("--max-steps", cfg.occlusion.max_steps, "Shadow step count cap")->capture_default_str();
  cmd->add_option("--box-margin", cfg.occlusion.box_margin, "Shadow clip box inflation in meters")
      ->capture_default_str();
  cmd->add_option("--ground-epsilon", cfg.occlusion.ground_epsilon, "Below-ground tolerance in meters")
      ->capture_default_str();
  cmd->add_option("--ground-threshold", cfg.ground.inlier_threshold, "Ground fit inlier threshold in meters")
      ->capture_default_str();
  cmd->add_option("--ground-iterations", cfg.ground.iterations, "Ground fit hypothesis count")->capture_default_str();
  cmd->add_option("--ground-grid-cell", cfg.ground_grid_cell, "Rasterize ground to this cell size (0 = plane)")
      ->capture_default_str();
  cmd->add_option("--scheme", scheme, "Class scheme")->check(CLI::IsMember({"7class", "5class"}))->capture_default_str();
  cmd->add_option("--n-points", cfg.n_points, "Points per resampled sample")->capture_default_str();
  cmd->add_option("--test-fraction", cfg.test_fraction, "Per-class test fraction")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "Global seed")->capture_default_str();
  cmd->add_flag("--no-frustum-filter", no_frustum, "Cast shadows from every obstacle point");
  cmd->add_option("--dedup-voxel", cfg.dedup_voxel, "Shadow dedup voxel size (0 = off)")->capture_default_str();
  cmd->add_flag("--strict", cfg.strict, "Fail without writing if any frame is bad");
  cmd->add_option("--workers", cfg.workers, "Worker threads (0 = all cores)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LIDAR occlusion preprocessing toolkit"};
  app.require_subcommand(1);

  PipelineConfig cfg;
  std::string scheme = "7class";
  bool no_frustum = false;
  add_preprocess(app, cfg, scheme, no_frustum);

  auto* ply = app.add_subcommand("export-ply", "Write one sample as a colored ASCII PLY");
  fs::path ply_dataset;
  std::string ply_sample;
  fs::path ply_out;
  bool before = false;
  ply->add_option("--dataset", ply_dataset, "Dataset directory")->required();
  ply->add_option("--sample", ply_sample, "Sample id")->required();
  ply->add_option("--out", ply_out, "Output .ply path")->required();
  ply->add_flag("--before", before, "Only the measured (o = 0) points");

  auto* stats = app.add_subcommand("stats", "Class distribution and shadow statistics");
  fs::path stats_dataset;
  bool as_json = false;
  stats->add_option("--dataset", stats_dataset, "Dataset directory")->required();
  stats->add_flag("--json", as_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("preprocess")) {
      cfg.scheme = occlusion::dataset::parse_scheme(scheme);
      cfg.frustum_filter = !no_frustum;
      cfg.occlusion.seed = cfg.seed;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
      }
      const auto result = occlusion::pipeline::run_preprocess(cfg, std::cout);
      for (const auto& e : result.errors) {
        std::cerr << "error: " << (e.frame_id.empty() ? "" : "frame " + e.frame_id + ": ") << e.message << '\n';
      }
      return result.exit_code() == 0 ? kExitOk : kExitData;
    }
    if (app.got_subcommand("export-ply")) {
      const auto out = occlusion::pipeline::export_dataset_ply(ply_dataset, ply_sample, before);
      std::ofstream file(ply_out, std::ios::trunc);
      if (!file) {
        std::cerr << "error: cannot write " << ply_out << '\n';
        return kExitData;
      }
      file << out.text;
      std::cout << "wrote " << out.vertices << " vertices to " << ply_out.string() << '\n';
      return kExitOk;
    }
    if (app.got_subcommand("stats")) {
      const auto manifest = occlusion::dataset::read_manifest((stats_dataset / "manifest.json").string());
      const auto report = occlusion::pipeline::compute_stats(manifest);
      if (as_json) {
        std::cout << report.to_json().dump(2) << '\n';
      } else {
        std::cout << report.to_text();
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
