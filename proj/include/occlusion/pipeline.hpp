#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusion/dataset.hpp"
#include "occlusion/geometry.hpp"
#include "occlusion/ground.hpp"

namespace occlusion::pipeline {

struct PipelineConfig {
  std::filesystem::path points_dir;
  std::filesystem::path labels_dir;
  std::filesystem::path calib_dir;
  std::filesystem::path output_dir;
  OcclusionConfig occlusion;
  GroundFitParams ground;
  /// Rasterize the fitted plane into a height grid of this cell size; 0 keeps the plane.
  double ground_grid_cell = 0.0;
  dataset::ClassScheme scheme = dataset::ClassScheme::SevenClass;
  std::size_t n_points = 1024;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  bool frustum_filter = true;
  double dedup_voxel = 0.0;
  bool strict = false;
  unsigned workers = 0;  ///< 0 picks the hardware concurrency

  /// Throws std::invalid_argument naming the offending flag.
  void validate() const;
  nlohmann::json snapshot() const;
};

struct FrameError {
  std::string frame_id;
  std::string message;
};

struct PreprocessResult {
  std::vector<FrameError> errors;
  std::size_t frames_ok = 0;
  std::size_t empty_samples = 0;
  bool wrote_outputs = false;
  std::optional<dataset::DatasetManifest> manifest;

  /// 0 on success, 2 for any data error.
  int exit_code() const { return errors.empty() && manifest ? 0 : 2; }
};

/// Frame ids are the stems of the .bin files in points_dir, processed in sorted
/// order. Outputs under output_dir: manifest.json, samples/<id>.bin (resampled
/// n x 4 records) and augmented/<id>.bin (full augmented records). In strict
/// mode nothing is written if any frame fails.
PreprocessResult run_preprocess(const PipelineConfig& cfg, std::ostream& log);

/// Runs frames through [0, count) on a bounded pool; results are collected by index.
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& body);

// -- PLY export -----------------------------------------------------------------

struct PlyExport {
  std::string text;
  std::size_t vertices = 0;
};

/// ASCII PLY of one sample's augmented record; o = 0 blue, o = 1 red. With
/// before_only the shadow points are left out.
PlyExport export_ply(const dataset::SampleRecord& record, bool before_only);

/// Looks the sample up in the dataset manifest; throws dataset::DatasetError if unknown.
PlyExport export_dataset_ply(const std::filesystem::path& dataset_dir, const std::string& sample_id,
                             bool before_only);

// -- Stats ----------------------------------------------------------------------

struct Quantiles {
  double min = 0.0, p25 = 0.0, median = 0.0, p75 = 0.0, max = 0.0, mean = 0.0;
};

Quantiles quantiles(std::vector<double> values);

struct ClassView {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, double> fractions;
};

struct StatsReport {
  bool empty = true;
  std::size_t samples = 0;
  std::string scheme;
  ClassView seven_class;
  ClassView five_class;
  std::map<std::string, std::size_t> split_counts;
  Quantiles shadow_fraction;
  Quantiles point_count;
  std::size_t shadow_points = 0;
  std::size_t shadow_from_obstacle = 0;
  std::size_t shadow_from_object = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

StatsReport compute_stats(const dataset::DatasetManifest& manifest);

}  // namespace occlusion::pipeline
