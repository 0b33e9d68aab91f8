#include "occlusion/geometry.hpp"

#include <cmath>
#include <numbers>

#include "occlusion/ground.hpp"

namespace occlusion {

bool RawPoint::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

double normalize_angle(double radians) {
  double wrapped = std::remainder(radians, 2.0 * std::numbers::pi);
  if (wrapped <= -std::numbers::pi) wrapped += 2.0 * std::numbers::pi;
  return wrapped;
}

OrientedBox::OrientedBox(const Eigen::Vector3d& center, const Eigen::Vector3d& dimensions,
                         double yaw)
    : center_(center), dimensions_(dimensions), yaw_(normalize_angle(yaw)) {
  if (!center.allFinite() || !dimensions.allFinite() || !std::isfinite(yaw)) {
    throw GeometryError("box parameters must be finite");
  }
  if ((dimensions.array() <= 0.0).any()) {
    throw GeometryError("box dimensions must be strictly positive");
  }
}

Eigen::Vector3d OrientedBox::to_box_frame(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d d = p - center_;
  const double c = std::cos(yaw_);
  const double s = std::sin(yaw_);
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

std::vector<Eigen::Vector3d> OrientedBox::corners(double margin) const {
  const Eigen::Vector3d half = dimensions_ / 2.0 + Eigen::Vector3d::Constant(margin);
  const double c = std::cos(yaw_);
  const double s = std::sin(yaw_);
  std::vector<Eigen::Vector3d> out;
  out.reserve(8);
  for (int i = 0; i < 8; ++i) {
    const double lx = (i & 1) ? half.x() : -half.x();
    const double ly = (i & 2) ? half.y() : -half.y();
    const double lz = (i & 4) ? half.z() : -half.z();
    out.emplace_back(center_.x() + c * lx - s * ly, center_.y() + s * lx + c * ly,
                     center_.z() + lz);
  }
  return out;
}

void OcclusionConfig::validate() const {
  if (!(step_s > 0.0) || !std::isfinite(step_s)) throw GeometryError("step_s must be > 0");
  if (!(max_range > 0.0)) throw GeometryError("max_range must be > 0");
  if (max_steps < 1) throw GeometryError("max_steps must be >= 1");
  if (!(box_margin >= 0.0)) throw GeometryError("box_margin must be >= 0");
  if (!std::isfinite(ground_epsilon)) throw GeometryError("ground_epsilon must be finite");
}

double range(const RawPoint& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }
double range(const TaggedPoint& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }

ShadowStop walk_shadow_ray(const RawPoint& source, const GroundModel& ground,
                           const OcclusionConfig& cfg,
                           const std::function<bool(const ShadowStep&)>& visit) {
  const double base = range(source);
  if (!(base > 0.0) || !source.finite()) {
    throw GeometryError("shadow ray undefined: source at origin or non-finite");
  }
  for (int k = 1;; ++k) {
    if (k > cfg.max_steps) return ShadowStop::MaxSteps;
    const double r = base + k * cfg.step_s;
    if (r > cfg.max_range) return ShadowStop::MaxRange;
    const double scale = r / base;
    const ShadowStep step{k, TaggedPoint{source.x * scale, source.y * scale, source.z * scale, 1}};
    const bool below =
        step.point.z < ground.height(step.point.x, step.point.y) - cfg.ground_epsilon;
    if (!visit(step)) return ShadowStop::Visitor;
    if (below) return ShadowStop::Ground;
  }
}

std::vector<TaggedPoint> shadow_points(const RawPoint& source, const GroundModel& ground,
                                       const OcclusionConfig& cfg) {
  std::vector<TaggedPoint> out;
  walk_shadow_ray(source, ground, cfg, [&out](const ShadowStep& step) {
    out.push_back(step.point);
    return true;
  });
  return out;
}

bool box_contains(const OrientedBox& box, const Eigen::Vector3d& p, double margin) {
  const Eigen::Vector3d local = box.to_box_frame(p);
  const Eigen::Vector3d half = box.dimensions() / 2.0 + Eigen::Vector3d::Constant(margin);
  return std::abs(local.x()) <= half.x() && std::abs(local.y()) <= half.y() &&
         std::abs(local.z()) <= half.z();
}

}  // namespace occlusion
