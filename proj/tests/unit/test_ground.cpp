#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "occlusion/ground.hpp"

namespace occlusion {
namespace {

// 1000 ground returns around z = -1.7 plus 200 returns on the faces of a box
// standing on the ground.
std::vector<RawPoint> synthetic_frame(std::uint64_t seed, double noise = 0.01) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-20.0, 20.0);
  std::normal_distribution<double> jitter(0.0, noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<RawPoint> frame;
  for (int i = 0; i < 1000; ++i) frame.push_back({xy(rng), xy(rng), -1.7 + jitter(rng), 0.2f});
  for (int i = 0; i < 200; ++i) {
    const double a = unit(rng), b = unit(rng);
    switch (i % 4) {
      case 0: frame.push_back({8.0, -1.0 + 2.0 * a, -1.7 + 1.5 * b, 0.5f}); break;
      case 1: frame.push_back({8.0 + 4.0 * a, -1.0, -1.7 + 1.5 * b, 0.5f}); break;
      case 2: frame.push_back({8.0 + 4.0 * a, -1.0 + 2.0 * b, -0.2, 0.5f}); break;
      default: frame.push_back({8.0 + 4.0 * a, 1.0, -1.7 + 1.5 * b, 0.5f}); break;
    }
  }
  return frame;
}

TEST(FitGround, RecoversSyntheticPlaneUnderClutter) {
  GroundFitParams params;
  params.seed = 42;
  const GroundModel model = fit_ground(synthetic_frame(1), params);
  ASSERT_TRUE(model.is_plane());
  EXPECT_GE(model.plane().normal.z(), 0.8);
  for (const auto& [x, y] : {std::pair{0.0, 0.0}, {20.0, 20.0}, {-20.0, 20.0}, {20.0, -20.0}, {-20.0, -20.0}}) {
    EXPECT_NEAR(ground_height(model, x, y), -1.7, 0.02) << "at " << x << ", " << y;
  }
}

TEST(FitGround, ExactPlaneAtSensorHeight) {
  std::vector<RawPoint> frame;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) frame.push_back({i - 4.5, j * 1.3 - 6.0, 0.0, 0.0f});
  const GroundModel model = fit_ground(frame, {});
  EXPECT_NEAR(model.plane().normal.z(), 1.0, 1e-12);
  EXPECT_NEAR(model.plane().offset, 0.0, 1e-12);
  EXPECT_NEAR(ground_height(model, 3.0, -7.0), 0.0, 1e-12);
}

TEST(FitGround, TooFewPointsIsAnError) {
  std::vector<RawPoint> frame(10, RawPoint{1.0, 1.0, -1.7});
  EXPECT_THROW(fit_ground(frame, {}), GroundFitError);
}

TEST(FitGround, DeterministicInSeed) {
  const auto frame = synthetic_frame(5, 0.05);
  GroundFitParams params;
  params.seed = 99;
  const auto a = fit_ground(frame, params).to_json();
  const auto b = fit_ground(frame, params).to_json();
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(FitGround, ResultDominatesEveryDrawnHypothesis) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GroundFitParams params;
    params.seed = seed;
    const auto report = fit_ground_report(synthetic_frame(seed + 100, 0.05), params);
    ASSERT_FALSE(report.fallback);
    ASSERT_FALSE(report.hypothesis_inliers.empty());
    for (const std::size_t n : report.hypothesis_inliers) EXPECT_GE(report.inliers, n);
  }
}

TEST(FitGround, WallOnlyFrameFallsBackToPercentilePlane) {
  std::vector<RawPoint> frame;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 5; ++j) frame.push_back({5.0, -5.0 + i * 0.5, -2.0 + j * 0.4, 0.0f});
  const auto report = fit_ground_report(frame, {});
  EXPECT_TRUE(report.fallback);
  EXPECT_EQ(report.plane.normal, Eigen::Vector3d::UnitZ());
  // 5th percentile of 100 z values taken from {-2.0, -1.6, ...}: the floor index 4 is -2.0.
  EXPECT_DOUBLE_EQ(report.plane.height_at(0, 0), -2.0);
}

TEST(FitGround, CollinearCandidatesNeverProduceAHypothesis) {
  std::vector<RawPoint> frame;
  for (int i = 0; i < 60; ++i) frame.push_back({1.0 + i * 0.1, 0.0, -1.5, 0.0f});
  const auto report = fit_ground_report(frame, {});
  EXPECT_TRUE(report.hypothesis_inliers.empty());
  EXPECT_TRUE(report.fallback);
  EXPECT_DOUBLE_EQ(report.plane.height_at(3, 3), -1.5);
}

TEST(GroundHeight, HorizontalPlane) {
  EXPECT_DOUBLE_EQ(ground_height(GroundModel::flat(-1.7), 10.0, 5.0), -1.7);
}

TEST(GroundHeight, TiltedPlaneThroughOrigin) {
  const double theta = 0.05;
  const GroundModel model(GroundPlane{{0.0, -std::sin(theta), std::cos(theta)}, 0.0});
  EXPECT_NEAR(ground_height(model, 0.0, 1.0), std::tan(theta), 1e-15);
  // Continuity: nearby queries give nearby heights.
  EXPECT_NEAR(ground_height(model, 0.0, 1.0 + 1e-6), ground_height(model, 0.0, 1.0), 1e-7);
}

TEST(GroundHeight, GridCellsAndFallback) {
  GroundGrid grid;
  grid.cell_size = 1.0;
  grid.origin_x = 0.0;
  grid.origin_y = 0.0;
  grid.cols = 2;
  grid.rows = 2;
  grid.heights = {-1.0, std::nullopt, -1.2, -1.3};
  grid.fallback = -1.6;
  const GroundModel model(grid);
  EXPECT_DOUBLE_EQ(ground_height(model, 0.5, 0.5), -1.0);
  EXPECT_DOUBLE_EQ(ground_height(model, 1.5, 0.5), -1.6);
  EXPECT_DOUBLE_EQ(ground_height(model, 0.5, 1.5), -1.2);
  EXPECT_DOUBLE_EQ(ground_height(model, 1.99, 1.99), -1.3);
  EXPECT_DOUBLE_EQ(ground_height(model, -3.0, 0.5), -1.6);
  EXPECT_DOUBLE_EQ(ground_height(model, 2.0, 0.5), -1.6);
  EXPECT_DOUBLE_EQ(ground_height(model, 1e300, -1e300), -1.6);
}

TEST(GroundModel, RejectsInvalidRepresentations) {
  EXPECT_THROW(GroundModel(GroundPlane{{1.0, 0.0, 0.0}, 0.0}), GroundFitError);
  EXPECT_THROW(GroundModel(GroundPlane{{0.0, 0.0, -1.0}, 0.0}), GroundFitError);
  EXPECT_THROW(GroundModel(GroundPlane{{0.0, 0.0, 0.0}, 0.0}), GroundFitError);
  GroundGrid grid;
  grid.cell_size = 0.0;
  EXPECT_THROW(GroundModel{grid}, GroundFitError);
  grid.cell_size = 1.0;
  grid.cols = 2;
  grid.rows = 1;
  EXPECT_THROW(GroundModel{grid}, GroundFitError);
}

TEST(GroundModel, PlaneNormalIsNormalized) {
  const GroundModel model(GroundPlane{{0.0, 0.0, 2.0}, 3.0});
  EXPECT_DOUBLE_EQ(model.plane().normal.norm(), 1.0);
  EXPECT_DOUBLE_EQ(model.height(4.0, 4.0), -1.5);
}

TEST(GroundModel, JsonRoundTrip) {
  const GroundModel plane(GroundPlane{Eigen::Vector3d(0.01, -0.02, 1.0).normalized(), 1.65});
  const auto back = GroundModel::from_json(plane.to_json());
  EXPECT_EQ(back.to_json().dump(), plane.to_json().dump());
  EXPECT_DOUBLE_EQ(back.height(3.0, 4.0), plane.height(3.0, 4.0));

  GroundGrid grid;
  grid.cell_size = 0.5;
  grid.origin_x = -1.0;
  grid.origin_y = -2.0;
  grid.cols = 3;
  grid.rows = 1;
  grid.heights = {-1.5, std::nullopt, -1.7};
  grid.fallback = -1.6;
  const GroundModel g(grid);
  const auto g2 = GroundModel::from_json(nlohmann::json::parse(g.to_json().dump()));
  EXPECT_FALSE(g2.is_plane());
  EXPECT_EQ(g2.to_json().dump(), g.to_json().dump());
  EXPECT_THROW(GroundModel::from_json({{"form", "mesh"}}), GroundFitError);
}

TEST(RasterizeGround, CellsFollowInliersAndFallbackFollowsPlane) {
  const auto frame = synthetic_frame(9);
  const auto report = fit_ground_report(frame, {});
  const GroundModel grid = rasterize_ground(frame, report.plane, 5.0, 0.15);
  ASSERT_FALSE(grid.is_plane());
  EXPECT_NEAR(grid.height(0.0, 0.0), -1.7, 0.02);
  EXPECT_NEAR(grid.height(-15.0, 12.0), -1.7, 0.02);
  EXPECT_NEAR(grid.height(500.0, 500.0), report.plane.height_at(0.0, 0.0), 0.05);
}

}  // namespace
}  // namespace occlusion
