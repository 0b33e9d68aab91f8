#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "occlusion/pipeline.hpp"
#include "test_support.hpp"

namespace occlusion::pipeline {
namespace {

namespace fs = std::filesystem;
const fs::path kFixture = FIXTURE_DIR;

PipelineConfig fixture_config(const fs::path& out) {
  PipelineConfig cfg;
  cfg.points_dir = kFixture / "velodyne";
  cfg.labels_dir = kFixture / "label_2";
  cfg.calib_dir = kFixture / "calib";
  cfg.output_dir = out;
  cfg.seed = 7;
  return cfg;
}

nlohmann::json golden() { return nlohmann::json::parse(testing::read_bytes(kFixture / "golden.json")); }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(OCCLUSION_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class FixtureRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("pipeline");
    std::ostringstream log;
    result_ = new PreprocessResult(run_preprocess(fixture_config(dir_->path()), log));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete dir_;
  }
  static testing::TempDir* dir_;
  static PreprocessResult* result_;
};
testing::TempDir* FixtureRun::dir_ = nullptr;
PreprocessResult* FixtureRun::result_ = nullptr;

TEST_F(FixtureRun, CountsMatchTheAudit) {
  const auto g = golden();
  ASSERT_EQ(result_->exit_code(), 0);
  ASSERT_TRUE(result_->manifest.has_value());
  const auto& m = *result_->manifest;
  EXPECT_EQ(m.samples.size(), g["exported_samples"].get<std::size_t>());
  EXPECT_EQ(result_->empty_samples, g["total_labels"].get<std::size_t>() - m.samples.size());
  for (const auto& [name, count] : g["exported_histogram_7class"].items()) {
    EXPECT_EQ(m.category_counts().at(name), count.get<std::size_t>()) << name;
  }
  for (const auto& sid : g["empty_object_clouds"]) {
    const auto it = std::find_if(m.samples.begin(), m.samples.end(),
                                 [&](const auto& e) { return e.sample_id == sid.get<std::string>(); });
    ASSERT_NE(it, m.samples.end()) << sid;
    EXPECT_EQ(it->n_original, 0u);
    EXPECT_EQ(it->n_shadow_from_object, 0u);
    EXPECT_GT(it->n_shadow_from_obstacle, 0u);
  }
}

TEST_F(FixtureRun, ManifestOnDiskIsConsistent) {
  const auto m = dataset::read_manifest((dir_->path() / "manifest.json").string());
  std::size_t tests = 0;
  for (const auto& e : m.samples) {
    const auto resampled = dataset::read_sample_file((dir_->path() / e.file).string());
    const auto full = dataset::read_sample_file((dir_->path() / e.augmented_file).string());
    EXPECT_EQ(resampled.points.size(), 1024u);
    EXPECT_TRUE(resampled.flags & dataset::kFlagResampled);
    EXPECT_EQ(full.points.size(), e.n_total());
    EXPECT_EQ(full.class_id, e.class_id);
    tests += e.split == dataset::Split::Test;
  }
  EXPECT_GT(tests, 0u);
  EXPECT_TRUE(std::is_sorted(m.samples.begin(), m.samples.end(),
                             [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; }));
  EXPECT_EQ(m.frames.size(), 3u);
}

TEST_F(FixtureRun, PlyExportColorsShadowPoints) {
  const auto& m = *result_->manifest;
  const auto& e = m.samples.front();
  const auto full = export_dataset_ply(dir_->path(), e.sample_id, false);
  const auto before = export_dataset_ply(dir_->path(), e.sample_id, true);
  EXPECT_EQ(full.vertices, e.n_total());
  EXPECT_EQ(before.vertices, e.n_original);
  std::istringstream in(full.text);
  std::string line;
  std::size_t red = 0, blue = 0;
  bool body = false;
  while (std::getline(in, line)) {
    if (body) {
      red += line.find(" 255 0 0 1") != std::string::npos;
      blue += line.find(" 0 0 255 0") != std::string::npos;
    }
    if (line == "end_header") body = true;
  }
  EXPECT_EQ(red, e.n_shadow_from_obstacle + e.n_shadow_from_object);
  EXPECT_EQ(blue, e.n_original);
  EXPECT_NE(full.text.find("element vertex " + std::to_string(full.vertices) + "\n"), std::string::npos);
  EXPECT_THROW(export_dataset_ply(dir_->path(), "nope_00", false), dataset::DatasetError);
}

TEST_F(FixtureRun, StatsAreConsistent) {
  const auto stats = compute_stats(*result_->manifest);
  EXPECT_FALSE(stats.empty);
  double total = 0.0;
  for (const auto& [name, f] : stats.seven_class.fractions) total += f;
  EXPECT_NEAR(total, 1.0, 1e-12);
  total = 0.0;
  for (const auto& [name, f] : stats.five_class.fractions) total += f;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const auto& c = stats.seven_class.counts;
  EXPECT_EQ(stats.five_class.counts.at("vehicle"), c.at("car") + c.at("van") + c.at("truck"));
  EXPECT_EQ(stats.split_counts.at("train") + stats.split_counts.at("test"), stats.samples);
  EXPECT_GE(stats.shadow_fraction.max, stats.shadow_fraction.median);
  EXPECT_DOUBLE_EQ(stats.shadow_fraction.max, 1.0);  // fully occluded samples
  EXPECT_EQ(stats.to_json().at("7class").at("counts").at("tram"), 1);
}

TEST(Stats, EmptyManifestIsMarked) {
  const auto stats = compute_stats(dataset::DatasetManifest{});
  EXPECT_TRUE(stats.empty);
  EXPECT_EQ(stats.to_json().at("empty"), true);
  EXPECT_NE(stats.to_text().find("empty"), std::string::npos);
}

TEST(Quantiles, LinearInterpolation) {
  const auto q = quantiles({4.0, 1.0, 3.0, 2.0, 5.0});
  EXPECT_DOUBLE_EQ(q.min, 1.0);
  EXPECT_DOUBLE_EQ(q.p25, 2.0);
  EXPECT_DOUBLE_EQ(q.median, 3.0);
  EXPECT_DOUBLE_EQ(q.max, 5.0);
  EXPECT_DOUBLE_EQ(q.mean, 3.0);
  EXPECT_DOUBLE_EQ(quantiles({1.0, 2.0}).median, 1.5);
}

TEST(Preprocess, OutputIsByteIdenticalAcrossRunsAndWorkerCounts) {
  testing::TempDir a("det_a"), b("det_b");
  std::ostringstream log;
  auto cfg_a = fixture_config(a.path());
  cfg_a.workers = 1;
  auto cfg_b = fixture_config(b.path());
  cfg_b.workers = 4;
  ASSERT_EQ(run_preprocess(cfg_a, log).exit_code(), 0);
  ASSERT_EQ(run_preprocess(cfg_b, log).exit_code(), 0);
  EXPECT_EQ(testing::snapshot_tree(a.path()), testing::snapshot_tree(b.path()));
}

TEST(Preprocess, EmptyInputDirectoryReportsNoFrames) {
  testing::TempDir in("empty_in"), out("empty_out");
  PipelineConfig cfg;
  cfg.points_dir = cfg.labels_dir = cfg.calib_dir = in.path();
  cfg.output_dir = out.path() / "ds";
  std::ostringstream log;
  const auto result = run_preprocess(cfg, log);
  EXPECT_EQ(result.exit_code(), 2);
  ASSERT_EQ(result.errors.size(), 1u);
  EXPECT_EQ(result.errors[0].message, "no frames found");
  EXPECT_FALSE(fs::exists(cfg.output_dir));
}

void copy_fixture(const fs::path& dst) {
  for (const char* sub : {"velodyne", "label_2", "calib"}) {
    fs::create_directories(dst / sub);
    for (const auto& e : fs::directory_iterator(kFixture / sub)) fs::copy_file(e.path(), dst / sub / e.path().filename());
  }
}

TEST(Preprocess, CorruptFrameIsReportedAndStrictModeWritesNothing) {
  testing::TempDir in("corrupt_in"), out("corrupt_out");
  copy_fixture(in.path());
  fs::resize_file(in.path() / "velodyne" / "000001.bin", fs::file_size(in.path() / "velodyne" / "000001.bin") - 5);
  auto cfg = fixture_config(out.path() / "lenient");
  cfg.points_dir = in.path() / "velodyne";
  cfg.labels_dir = in.path() / "label_2";
  cfg.calib_dir = in.path() / "calib";
  std::ostringstream log;
  const auto lenient = run_preprocess(cfg, log);
  ASSERT_EQ(lenient.errors.size(), 1u);
  EXPECT_EQ(lenient.errors[0].frame_id, "000001");
  EXPECT_EQ(lenient.frames_ok, 2u);
  EXPECT_TRUE(lenient.wrote_outputs);
  EXPECT_EQ(lenient.exit_code(), 2);
  for (const auto& e : lenient.manifest->samples) EXPECT_NE(e.frame_id, "000001");

  cfg.output_dir = out.path() / "strict";
  cfg.strict = true;
  const auto strict = run_preprocess(cfg, log);
  EXPECT_FALSE(strict.wrote_outputs);
  EXPECT_FALSE(fs::exists(cfg.output_dir));
  EXPECT_EQ(strict.exit_code(), 2);
}

TEST(Preprocess, MissingLabelOrCalibFileIsAFrameError) {
  testing::TempDir in("missing_in"), out("missing_out");
  copy_fixture(in.path());
  fs::remove(in.path() / "calib" / "000002.txt");
  auto cfg = fixture_config(out.path());
  cfg.points_dir = in.path() / "velodyne";
  cfg.labels_dir = in.path() / "label_2";
  cfg.calib_dir = in.path() / "calib";
  std::ostringstream log;
  const auto result = run_preprocess(cfg, log);
  ASSERT_EQ(result.errors.size(), 1u);
  EXPECT_EQ(result.errors[0].frame_id, "000002");
}

TEST(Config, ValidationNamesTheFlag) {
  PipelineConfig cfg;
  cfg.n_points = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("--n-points"), std::string::npos);
  }
  cfg = {};
  cfg.occlusion.step_s = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Cli, ExitCodesAndSubcommands) {
  testing::TempDir dir("cli");
  const fs::path log = dir.path() / "log.txt";
  const std::string inputs = "--points " + (kFixture / "velodyne").string() + " --labels " +
                             (kFixture / "label_2").string() + " --calib " + (kFixture / "calib").string();
  const fs::path ds = dir.path() / "ds";

  EXPECT_EQ(run_cli("preprocess " + inputs + " --out " + ds.string() + " --scheme 5class --seed 3", log), 0);
  ASSERT_TRUE(fs::exists(ds / "manifest.json"));
  EXPECT_EQ(dataset::read_manifest((ds / "manifest.json").string()).scheme, dataset::ClassScheme::FiveClass);

  EXPECT_EQ(run_cli("stats --dataset " + ds.string() + " --json", log), 0);
  const auto stats = nlohmann::json::parse(testing::read_bytes(log));
  EXPECT_EQ(stats.at("5class").at("counts").at("vehicle"), 12);

  const fs::path ply = dir.path() / "s.ply";
  EXPECT_EQ(run_cli("export-ply --dataset " + ds.string() + " --sample 000000_00 --out " + ply.string(), log), 0);
  EXPECT_EQ(testing::read_bytes(ply).rfind("ply\n", 0), 0u);
  EXPECT_EQ(run_cli("export-ply --dataset " + ds.string() + " --sample missing_00 --out " + ply.string(), log), 2);

  EXPECT_EQ(run_cli("preprocess " + inputs + " --out " + ds.string() + " --step -1", log), 1);
  EXPECT_NE(testing::read_bytes(log).find("--step"), std::string::npos);
  EXPECT_EQ(run_cli("preprocess " + inputs + " --out " + ds.string() + " --scheme 6class", log), 1);
  EXPECT_EQ(run_cli("frobnicate", log), 1);

  const fs::path empty = dir.path() / "empty";
  fs::create_directories(empty);
  EXPECT_EQ(run_cli("preprocess --points " + empty.string() + " --labels " + empty.string() + " --calib " +
                        empty.string() + " --out " + (dir.path() / "none").string(),
                    log),
            2);
  EXPECT_NE(testing::read_bytes(log).find("no frames found"), std::string::npos);
}

}  // namespace
}  // namespace occlusion::pipeline
