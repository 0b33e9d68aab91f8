#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "occlusion/geometry.hpp"

namespace occlusion::kitti {

/// Malformed binary or text input. offset is a byte offset for binary data and
/// a 1-based line number for text data.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Category : std::uint8_t { Car, Van, Truck, Pedestrian, Cyclist, Tram, Misc };

inline constexpr std::size_t kCategoryCount = 7;

std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view name);
/// KITTI object type to category. Person_sitting folds into misc; DontCare and
/// unknown types have no category.
std::optional<Category> category_from_kitti_type(std::string_view type);

// -- Point binary ------------------------------------------------------------

struct PointReadResult {
  std::vector<RawPoint> points;
  std::size_t dropped_origin = 0;
  std::size_t skipped_nonfinite = 0;
};

/// 16-byte little-endian float records (x, y, z, reflectance).
PointReadResult read_point_binary(std::span<const std::byte> bytes);
std::vector<std::byte> write_point_binary(std::span<const RawPoint> points);

// -- Calibration --------------------------------------------------------------

struct Calibration {
  /// Sensor (velodyne) frame to rectified camera frame: R0_rect * Tr_velo_to_cam.
  Eigen::Matrix4d velo_to_rect = Eigen::Matrix4d::Identity();

  Eigen::Vector3d rect_to_velo(const Eigen::Vector3d& p) const;
  Eigen::Vector3d rect_direction_to_velo(const Eigen::Vector3d& d) const;
};

/// Parses `key: v1 v2 ...` text. Requires Tr_velo_to_cam (3x4) and R0_rect (3x3).
Calibration parse_calibration(std::string_view text);

// -- Labels -------------------------------------------------------------------

/// The numeric fields of one KITTI object line, as written.
struct LabelFields {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};
  double height = 0.0;
  double width = 0.0;
  double length = 0.0;
  Eigen::Vector3d location = Eigen::Vector3d::Zero();
  double rotation_y = 0.0;
  std::optional<double> score;
};

struct LabeledBox {
  Category category = Category::Misc;
  OrientedBox box;
  LabelFields source;
  std::string source_line;
};

struct LabelReadResult {
  std::vector<LabeledBox> labels;
  std::size_t skipped = 0;
};

/// Boxes in the sensor frame. Unknown types and DontCare are skipped and counted.
LabelReadResult read_labels(std::string_view label_text, const Calibration& calib);

// -- Frames and samples ---------------------------------------------------------

struct Frame {
  std::string frame_id;
  std::vector<RawPoint> points;
  std::vector<LabeledBox> labels;
  std::size_t dropped_points = 0;
  std::size_t skipped_labels = 0;
};

struct FramePaths {
  std::filesystem::path points;
  std::filesystem::path labels;
  std::filesystem::path calib;
};

/// Loads and validates one frame; throws FormatError or CalibrationError.
Frame load_frame(const std::string& frame_id, const FramePaths& paths);

struct ObjectSample {
  std::string sample_id;
  Category category = Category::Misc;
  OrientedBox box;
  std::vector<RawPoint> object_points;
  std::vector<RawPoint> obstacle_points;
  /// Frame indices of the entries of object_points / obstacle_points.
  std::vector<std::size_t> object_indices;
  std::vector<std::size_t> obstacle_indices;
};

struct PartitionOptions {
  bool frustum_filter = false;
  /// Box inflation the frustum is built for; must cover the clip margin used later.
  double frustum_margin = 0.0;
  double angular_pad_deg = 2.0;
};

/// Angular window of a box seen from the sensor origin. Obstacle points can
/// only shadow into the box if their direction falls inside it and they are
/// nearer than the box's farthest corner.
class Frustum {
 public:
  Frustum(const OrientedBox& box, double margin, double pad_deg);
  bool admits(const RawPoint& p) const;
  bool unbounded() const { return unbounded_; }

 private:
  bool unbounded_ = false;
  double center_azimuth_ = 0.0;
  double min_azimuth_ = 0.0;
  double max_azimuth_ = 0.0;
  double min_elevation_ = 0.0;
  double max_elevation_ = 0.0;
  double far_range_ = 0.0;
};

std::vector<ObjectSample> partition_frame(const Frame& frame, const PartitionOptions& options);

std::string make_sample_id(const std::string& frame_id, std::size_t label_index);

}  // namespace occlusion::kitti
