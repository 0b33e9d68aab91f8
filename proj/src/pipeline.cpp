#include "occlusion/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "occlusion/augment.hpp"
#include "occlusion/kitti.hpp"

namespace occlusion::pipeline {

namespace fs = std::filesystem;

namespace {

struct FrameOutput {
  std::string frame_id;
  std::optional<std::string> error;
  nlohmann::json info;
  std::vector<AugmentedSample> samples;
};

FrameOutput process_frame(const std::string& frame_id, const PipelineConfig& cfg) {
  FrameOutput out;
  out.frame_id = frame_id;
  try {
    const kitti::FramePaths paths{cfg.points_dir / (frame_id + ".bin"),
                                  cfg.labels_dir / (frame_id + ".txt"),
                                  cfg.calib_dir / (frame_id + ".txt")};
    if (!fs::exists(paths.labels)) throw kitti::FormatError("missing label file " + paths.labels.string(), 0);
    const kitti::Frame frame = kitti::load_frame(frame_id, paths);

    GroundFitParams ground_params = cfg.ground;
    ground_params.seed = dataset::derive_seed(cfg.seed, "ground/" + frame_id);
    const GroundFitReport fit = fit_ground_report(frame.points, ground_params);
    const GroundModel ground = cfg.ground_grid_cell > 0.0
                                   ? rasterize_ground(frame.points, fit.plane, cfg.ground_grid_cell,
                                                      ground_params.inlier_threshold)
                                   : GroundModel(fit.plane);

    const kitti::PartitionOptions partition{cfg.frustum_filter, cfg.occlusion.box_margin, 2.0};
    const auto objects = kitti::partition_frame(frame, partition);
    const AugmentOptions augment_options{cfg.dedup_voxel};
    for (const auto& object : objects) {
      out.samples.push_back(augment(object, ground, cfg.occlusion, augment_options));
    }

    out.info = {{"n_points", frame.points.size()},
                {"dropped_points", frame.dropped_points},
                {"n_labels", frame.labels.size()},
                {"skipped_labels", frame.skipped_labels},
                {"ground", ground.to_json()},
                {"ground_inliers", fit.inliers},
                {"ground_fallback", fit.fallback}};
  } catch (const std::exception& e) {
    out.error = e.what();
    out.samples.clear();
  }
  return out;
}

std::vector<std::string> discover_frames(const PipelineConfig& cfg, std::vector<FrameError>& errors) {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(cfg.points_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  const std::set<std::string> known(ids.begin(), ids.end());
  if (fs::is_directory(cfg.labels_dir)) {
    std::vector<std::string> orphans;
    for (const auto& entry : fs::directory_iterator(cfg.labels_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt" &&
          !known.contains(entry.path().stem().string())) {
        orphans.push_back(entry.path().stem().string());
      }
    }
    std::sort(orphans.begin(), orphans.end());
    for (const auto& id : orphans) errors.push_back({id, "label file has no matching point file"});
  }
  return ids;
}

}  // namespace

void PipelineConfig::validate() const {
  if (!(occlusion.step_s > 0.0) || !std::isfinite(occlusion.step_s)) {
    throw std::invalid_argument("--step must be > 0");
  }
  if (!(occlusion.max_range > 0.0)) throw std::invalid_argument("--max-range must be > 0");
  if (occlusion.max_steps < 1) throw std::invalid_argument("--max-steps must be >= 1");
  if (!(occlusion.box_margin >= 0.0)) throw std::invalid_argument("--box-margin must be >= 0");
  if (!std::isfinite(occlusion.ground_epsilon)) throw std::invalid_argument("--ground-epsilon must be finite");
  if (n_points == 0) throw std::invalid_argument("--n-points must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("--test-fraction must lie strictly between 0 and 1");
  }
  if (dedup_voxel < 0.0) throw std::invalid_argument("--dedup-voxel must be >= 0");
  if (ground_grid_cell < 0.0) throw std::invalid_argument("--ground-grid-cell must be >= 0");
  if (!(ground.inlier_threshold > 0.0)) throw std::invalid_argument("--ground-threshold must be > 0");
  if (ground.iterations < 1) throw std::invalid_argument("--ground-iterations must be >= 1");
}

nlohmann::json PipelineConfig::snapshot() const {
  nlohmann::json ground_params = ground.to_json();
  ground_params.erase("seed");
  return {{"occlusion",
           {{"step_s", occlusion.step_s},
            {"max_range", occlusion.max_range},
            {"max_steps", occlusion.max_steps},
            {"box_margin", occlusion.box_margin},
            {"ground_epsilon", occlusion.ground_epsilon},
            {"seed", occlusion.seed}}},
          {"ground", ground_params},
          {"ground_grid_cell", ground_grid_cell},
          {"frustum_filter", frustum_filter},
          {"dedup_voxel", dedup_voxel}};
}

void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) body(i);
    });
  }
}

PreprocessResult run_preprocess(const PipelineConfig& cfg, std::ostream& log) {
  PreprocessResult result;
  cfg.validate();
  for (const auto& [dir, flag] : {std::pair{cfg.points_dir, "--points"}, std::pair{cfg.labels_dir, "--labels"},
                                  std::pair{cfg.calib_dir, "--calib"}}) {
    if (!fs::is_directory(dir)) {
      result.errors.push_back({"", std::string(flag) + " directory " + dir.string() + " does not exist"});
    }
  }
  if (!result.errors.empty()) return result;

  const std::vector<std::string> ids = discover_frames(cfg, result.errors);
  if (ids.empty()) {
    result.errors.push_back({"", "no frames found"});
    return result;
  }

  std::vector<FrameOutput> frames(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) { frames[i] = process_frame(ids[i], cfg); });

  for (const auto& f : frames) {
    if (f.error) {
      result.errors.push_back({f.frame_id, *f.error});
    } else {
      ++result.frames_ok;
    }
  }
  std::sort(result.errors.begin(), result.errors.end(),
            [](const FrameError& a, const FrameError& b) { return a.frame_id < b.frame_id; });
  if (cfg.strict && !result.errors.empty()) {
    log << "strict mode: " << result.errors.size() << " frame error(s), nothing written\n";
    return result;
  }

  std::vector<const AugmentedSample*> kept;
  std::map<std::string, std::string> frame_of;
  nlohmann::json frames_info = nlohmann::json::object();
  for (const auto& f : frames) {
    if (f.error) continue;
    frames_info[f.frame_id] = f.info;
    for (const auto& s : f.samples) {
      if (s.points.empty()) {
        ++result.empty_samples;
        continue;
      }
      kept.push_back(&s);
      frame_of[s.sample_id] = f.frame_id;
    }
  }
  std::sort(kept.begin(), kept.end(),
            [](const AugmentedSample* a, const AugmentedSample* b) { return a->sample_id < b->sample_id; });

  std::vector<dataset::SplitInput> split_inputs;
  for (const auto* s : kept) split_inputs.push_back({s->sample_id, s->category});
  const auto split = dataset::split_dataset(split_inputs, cfg.scheme, cfg.test_fraction,
                                            dataset::derive_seed(cfg.seed, "split"));

  dataset::DatasetManifest manifest;
  manifest.scheme = cfg.scheme;
  manifest.n_points = cfg.n_points;
  manifest.test_fraction = cfg.test_fraction;
  manifest.seed = cfg.seed;
  manifest.config = cfg.snapshot();
  manifest.frames = frames_info;

  fs::create_directories(cfg.output_dir / "samples");
  fs::create_directories(cfg.output_dir / "augmented");
  std::vector<dataset::SampleEntry> entries(kept.size());
  parallel_for(kept.size(), cfg.workers, [&](std::size_t i) {
    const AugmentedSample& s = *kept[i];
    dataset::SampleRecord full = dataset::make_record(s, cfg.scheme);
    dataset::SampleRecord resampled = full;
    resampled.points = dataset::resample(s.points, cfg.n_points,
                                         dataset::derive_seed(cfg.seed, "resample/" + s.sample_id));
    resampled.flags |= dataset::kFlagResampled;

    dataset::SampleEntry& e = entries[i];
    e.sample_id = s.sample_id;
    e.frame_id = frame_of.at(s.sample_id);
    e.category = std::string(kitti::category_name(s.category));
    e.class_name = dataset::map_classes(e.category, cfg.scheme);
    e.class_id = full.class_id;
    e.split = split.assignment.at(s.sample_id);
    e.file = "samples/" + s.sample_id + ".bin";
    e.augmented_file = "augmented/" + s.sample_id + ".bin";
    e.n_points = resampled.points.size();
    e.n_original = s.n_original;
    e.n_shadow_from_obstacle = s.n_shadow_from_obstacle;
    e.n_shadow_from_object = s.n_shadow_from_object;
    dataset::write_sample_file((cfg.output_dir / e.file).string(), resampled);
    dataset::write_sample_file((cfg.output_dir / e.augmented_file).string(), full);
  });
  manifest.samples = std::move(entries);
  dataset::write_manifest((cfg.output_dir / "manifest.json").string(), manifest);
  result.wrote_outputs = true;

  const StatsReport stats = compute_stats(manifest);
  log << "frames: " << result.frames_ok << " ok, " << result.errors.size() << " failed\n";
  log << "samples: " << manifest.samples.size() << " written, " << result.empty_samples
      << " empty skipped\n";
  for (const auto& [name, count] : manifest.class_counts()) log << "  " << name << ": " << count << '\n';
  log << "shadow points: " << stats.shadow_points << " (" << stats.shadow_from_obstacle
      << " from obstacles, " << stats.shadow_from_object << " from objects)\n";
  log << "shadow fraction per sample: median " << stats.shadow_fraction.median << ", mean "
      << stats.shadow_fraction.mean << '\n';
  result.manifest = std::move(manifest);
  return result;
}

PlyExport export_ply(const dataset::SampleRecord& record, bool before_only) {
  std::ostringstream body;
  body << std::setprecision(9);
  std::size_t vertices = 0;
  for (const auto& p : record.points) {
    if (before_only && p.o != 0) continue;
    const bool shadow = p.o != 0;
    body << static_cast<float>(p.x) << ' ' << static_cast<float>(p.y) << ' ' << static_cast<float>(p.z)
         << ' ' << (shadow ? "255 0 0" : "0 0 255") << ' ' << static_cast<int>(p.o) << '\n';
    ++vertices;
  }
  std::ostringstream out;
  out << "ply\n"
      << "format ascii 1.0\n"
      << "comment sample " << record.sample_id << '\n'
      << "element vertex " << vertices << '\n'
      << "property float x\n"
      << "property float y\n"
      << "property float z\n"
      << "property uchar red\n"
      << "property uchar green\n"
      << "property uchar blue\n"
      << "property uchar occluded\n"
      << "end_header\n"
      << body.str();
  return {out.str(), vertices};
}

PlyExport export_dataset_ply(const fs::path& dataset_dir, const std::string& sample_id, bool before_only) {
  const auto manifest = dataset::read_manifest((dataset_dir / "manifest.json").string());
  const auto it = std::find_if(manifest.samples.begin(), manifest.samples.end(),
                               [&](const dataset::SampleEntry& e) { return e.sample_id == sample_id; });
  if (it == manifest.samples.end()) throw dataset::DatasetError("unknown sample id " + sample_id);
  return export_ply(dataset::read_sample_file((dataset_dir / it->augmented_file).string()), before_only);
}

Quantiles quantiles(std::vector<double> values) {
  Quantiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  q.min = values.front();
  q.p25 = at(0.25);
  q.median = at(0.5);
  q.p75 = at(0.75);
  q.max = values.back();
  double sum = 0.0;
  for (const double v : values) sum += v;
  q.mean = sum / static_cast<double>(values.size());
  return q;
}

StatsReport compute_stats(const dataset::DatasetManifest& manifest) {
  StatsReport r;
  r.scheme = std::string(dataset::scheme_name(manifest.scheme));
  r.samples = manifest.samples.size();
  r.empty = manifest.samples.empty();
  r.seven_class.counts = manifest.category_counts();
  for (const auto& name : dataset::class_names(dataset::ClassScheme::FiveClass)) r.five_class.counts[name] = 0;
  for (const auto& [name, count] : r.seven_class.counts) {
    r.five_class.counts[dataset::map_classes(name, dataset::ClassScheme::FiveClass)] += count;
  }
  for (auto* view : {&r.seven_class, &r.five_class}) {
    for (const auto& [name, count] : view->counts) {
      view->fractions[name] = r.empty ? 0.0 : static_cast<double>(count) / static_cast<double>(r.samples);
    }
  }
  r.split_counts = {{"train", 0}, {"test", 0}};
  std::vector<double> shadow_fraction;
  std::vector<double> point_count;
  for (const auto& s : manifest.samples) {
    ++r.split_counts[std::string(dataset::split_name(s.split))];
    r.shadow_from_obstacle += s.n_shadow_from_obstacle;
    r.shadow_from_object += s.n_shadow_from_object;
    const std::size_t total = s.n_total();
    point_count.push_back(static_cast<double>(total));
    shadow_fraction.push_back(total == 0 ? 0.0
                                         : static_cast<double>(s.n_shadow_from_obstacle + s.n_shadow_from_object) /
                                               static_cast<double>(total));
  }
  r.shadow_points = r.shadow_from_obstacle + r.shadow_from_object;
  r.shadow_fraction = quantiles(std::move(shadow_fraction));
  r.point_count = quantiles(std::move(point_count));
  return r;
}

namespace {

nlohmann::json quantiles_json(const Quantiles& q) {
  return {{"min", q.min}, {"p25", q.p25}, {"median", q.median}, {"p75", q.p75}, {"max", q.max}, {"mean", q.mean}};
}

void print_quantiles(std::ostream& out, const char* label, const Quantiles& q, int precision) {
  out << std::setprecision(precision) << label << ": min " << q.min << ", p25 " << q.p25 << ", median " << q.median << ", p75 " << q.p75
      << ", max " << q.max << ", mean " << q.mean << '\n';
}

}  // namespace

nlohmann::json StatsReport::to_json() const {
  auto view = [](const ClassView& v) { return nlohmann::json{{"counts", v.counts}, {"fractions", v.fractions}}; };
  return {{"empty", empty},
          {"samples", samples},
          {"class_scheme", scheme},
          {"7class", view(seven_class)},
          {"5class", view(five_class)},
          {"split_counts", split_counts},
          {"shadow_points", {{"total", shadow_points}, {"from_obstacle", shadow_from_obstacle}, {"from_object", shadow_from_object}}},
          {"shadow_fraction", quantiles_json(shadow_fraction)},
          {"point_count", quantiles_json(point_count)}};
}

std::string StatsReport::to_text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  if (empty) {
    out << "dataset is empty (0 samples)\n";
    return out.str();
  }
  out << "samples: " << samples << " (train " << split_counts.at("train") << ", test "
      << split_counts.at("test") << "), scheme " << scheme << '\n';
  for (const auto* v : {&seven_class, &five_class}) {
    out << (v == &seven_class ? "7-class" : "5-class") << " distribution:\n";
    for (const auto& [name, count] : v->counts) {
      out << "  " << std::left << std::setw(12) << name << std::right << std::setw(8) << count << "  "
          << v->fractions.at(name) << '\n';
    }
  }
  out << "shadow points: " << shadow_points << " (" << shadow_from_obstacle << " from obstacles, "
      << shadow_from_object << " from objects)\n";
  print_quantiles(out, "shadow fraction", shadow_fraction, 3);
  print_quantiles(out, "points per sample", point_count, 1);
  return out.str();
}

}  // namespace occlusion::pipeline
