#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "occlusion/geometry.hpp"

namespace occlusion {

class GroundFitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// n . p + offset = 0 with |n| = 1 and n.z > 0.
struct GroundPlane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;

  static GroundPlane horizontal(double height) { return {Eigen::Vector3d::UnitZ(), -height}; }
  double height_at(double x, double y) const;
};

/// Row-major grid of cell heights; cells without a height and queries outside
/// the grid return the fallback.
struct GroundGrid {
  double cell_size = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  int cols = 0;
  int rows = 0;
  std::vector<std::optional<double>> heights;
  double fallback = 0.0;

  double height_at(double x, double y) const;
};

/// Queryable ground height z_g(x, y). Immutable once constructed.
class GroundModel {
 public:
  explicit GroundModel(GroundPlane plane);
  explicit GroundModel(GroundGrid grid);

  static GroundModel flat(double height) { return GroundModel(GroundPlane::horizontal(height)); }

  double height(double x, double y) const;

  bool is_plane() const { return std::holds_alternative<GroundPlane>(repr_); }
  const GroundPlane& plane() const { return std::get<GroundPlane>(repr_); }
  const GroundGrid& grid() const { return std::get<GroundGrid>(repr_); }

  nlohmann::json to_json() const;
  static GroundModel from_json(const nlohmann::json& doc);

 private:
  std::variant<GroundPlane, GroundGrid> repr_;
};

struct GroundFitParams {
  double inlier_threshold = 0.15;
  int iterations = 200;
  std::uint64_t seed = 0;
  /// Only points at or below this height take part in the consensus search.
  double sensor_height = 0.0;
  /// Minimum vertical component of an admissible plane normal.
  double min_normal_z = 0.8;
  /// Fallback plane height as a percentile of frame z values.
  double fallback_percentile = 5.0;

  nlohmann::json to_json() const;
};

struct GroundFitReport {
  GroundPlane plane;
  std::size_t inliers = 0;
  std::size_t candidates = 0;
  bool fallback = false;
  /// Inlier counts of every admissible hypothesis drawn, in draw order.
  std::vector<std::size_t> hypothesis_inliers;
};

inline constexpr std::size_t kMinGroundFitPoints = 50;

/// Randomized three-point plane consensus over the points below the sensor.
/// Each sampled plane is refined by least squares on its own inliers before it
/// is scored; the result is the hypothesis with the most inliers. Hypotheses
/// with a normal steeper than min_normal_z and collinear samples are discarded. When
/// no admissible hypothesis exists the result is a horizontal plane at the
/// fallback percentile of frame z. Deterministic in params.seed.
GroundFitReport fit_ground_report(std::span<const RawPoint> frame, const GroundFitParams& params);
GroundModel fit_ground(std::span<const RawPoint> frame, const GroundFitParams& params);

/// Rasterizes a fitted plane into a grid: each cell holds the mean z of the
/// plane's inliers falling in it, and the fallback is the plane height at the
/// grid center.
GroundModel rasterize_ground(std::span<const RawPoint> frame, const GroundPlane& plane,
                             double cell_size, double inlier_threshold);

double ground_height(const GroundModel& model, double x, double y);

}  // namespace occlusion
