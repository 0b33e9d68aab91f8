#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace occlusion {

class GroundModel;

/// Thrown when an input violates a geometric precondition.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A measured LIDAR return in the sensor frame (sensor at the origin).
/// Reflectance is carried for auditing and never enters the geometry.
struct RawPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  float reflectance = 0.0f;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  bool finite() const;
};

/// A point of the 4D cloud: o = 0 for measured points, 1 for generated shadow points.
struct TaggedPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  std::uint8_t o = 0;

  static TaggedPoint measured(const RawPoint& p) { return {p.x, p.y, p.z, 0}; }
  Eigen::Vector3d vec() const { return {x, y, z}; }

  friend bool operator==(const TaggedPoint&, const TaggedPoint&) = default;
};

/// Box with a vertical heading axis. dimensions = (length, width, height), with
/// length running along the heading direction given by yaw.
class OrientedBox {
 public:
  OrientedBox() = default;
  OrientedBox(const Eigen::Vector3d& center, const Eigen::Vector3d& dimensions, double yaw);

  const Eigen::Vector3d& center() const { return center_; }
  const Eigen::Vector3d& dimensions() const { return dimensions_; }
  double yaw() const { return yaw_; }

  /// Coordinates of a sensor-frame position in the box frame.
  Eigen::Vector3d to_box_frame(const Eigen::Vector3d& p) const;
  /// The eight corners of the box inflated by margin on every axis.
  std::vector<Eigen::Vector3d> corners(double margin = 0.0) const;

 private:
  Eigen::Vector3d center_ = Eigen::Vector3d::Zero();
  Eigen::Vector3d dimensions_ = Eigen::Vector3d::Ones();
  double yaw_ = 0.0;
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double radians);

struct OcclusionConfig {
  double step_s = 0.3;
  double max_range = 120.0;
  int max_steps = 1000;
  double box_margin = 0.0;
  double ground_epsilon = 0.0;
  std::uint64_t seed = 0;

  /// Throws GeometryError if any field is out of its allowed range.
  void validate() const;
};

/// Euclidean distance from the sensor origin.
double range(const RawPoint& p);
double range(const TaggedPoint& p);

/// One step along a shadow ray: the index k and the generated point.
struct ShadowStep {
  int k = 0;
  TaggedPoint point;
};

enum class ShadowStop { Ground, MaxRange, MaxSteps, Visitor };

/// Walks the shadow ray behind source, calling visit for each generated point in
/// increasing k. The walk ends after the first point strictly below
/// ground - ground_epsilon (that point is visited), before the first point whose
/// range exceeds max_range or whose index exceeds max_steps, or when visit
/// returns false. Returns why it stopped.
ShadowStop walk_shadow_ray(const RawPoint& source, const GroundModel& ground,
                           const OcclusionConfig& cfg,
                           const std::function<bool(const ShadowStep&)>& visit);

/// All shadow points behind source, in increasing k, each tagged o = 1.
std::vector<TaggedPoint> shadow_points(const RawPoint& source, const GroundModel& ground,
                                       const OcclusionConfig& cfg);

bool box_contains(const OrientedBox& box, const Eigen::Vector3d& p, double margin);
inline bool box_contains(const OrientedBox& box, const TaggedPoint& p, double margin) {
  return box_contains(box, p.vec(), margin);
}
inline bool box_contains(const OrientedBox& box, const RawPoint& p, double margin) {
  return box_contains(box, p.vec(), margin);
}

}  // namespace occlusion
