#include "occlusion/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace occlusion {

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
    h ^= static_cast<std::size_t>(k.y) * 19349663u + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= static_cast<std::size_t>(k.z) * 83492791u + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
  }
};

struct Shadow {
  ShadowOrigin origin;
  TaggedPoint point;
};

}  // namespace

std::vector<std::size_t> dedup_voxel_indices(std::span<const TaggedPoint> points, double voxel) {
  if (!(voxel > 0.0)) throw GeometryError("voxel size must be > 0");
  std::unordered_set<VoxelKey, VoxelKeyHash> seen;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x / voxel)),
                       static_cast<std::int64_t>(std::floor(p.y / voxel)),
                       static_cast<std::int64_t>(std::floor(p.z / voxel))};
    if (seen.insert(key).second) kept.push_back(i);
  }
  return kept;
}

std::vector<TaggedPoint> dedup_voxel(std::span<const TaggedPoint> points, double voxel) {
  std::vector<TaggedPoint> out;
  for (const std::size_t i : dedup_voxel_indices(points, voxel)) out.push_back(points[i]);
  return out;
}

AugmentedSample augment(const kitti::ObjectSample& sample, const GroundModel& ground,
                        const OcclusionConfig& cfg, const AugmentOptions& options) {
  cfg.validate();
  if (options.dedup_voxel < 0.0) throw GeometryError("dedup voxel must be >= 0");
  if (sample.object_indices.size() != sample.object_points.size() ||
      sample.obstacle_indices.size() != sample.obstacle_points.size()) {
    throw GeometryError("sample index tables do not match its point lists");
  }

  // Nothing beyond the farthest corner can be inside the box, so rays stop there.
  double far_range = 0.0;
  for (const auto& c : sample.box.corners(cfg.box_margin)) far_range = std::max(far_range, c.norm());
  far_range = far_range * (1.0 + 1e-12) + 1e-12;

  std::vector<Shadow> shadows;
  auto cast = [&](const RawPoint& source, ShadowSource kind, std::size_t index) {
    walk_shadow_ray(source, ground, cfg, [&](const ShadowStep& step) {
      if (range(step.point) > far_range) return false;
      if (box_contains(sample.box, step.point, cfg.box_margin)) {
        shadows.push_back({{kind, index, step.k}, step.point});
      }
      return true;
    });
  };
  for (std::size_t i = 0; i < sample.obstacle_points.size(); ++i) {
    cast(sample.obstacle_points[i], ShadowSource::Obstacle, sample.obstacle_indices[i]);
  }
  for (std::size_t i = 0; i < sample.object_points.size(); ++i) {
    cast(sample.object_points[i], ShadowSource::Object, sample.object_indices[i]);
  }
  std::stable_sort(shadows.begin(), shadows.end(),
                   [](const Shadow& a, const Shadow& b) { return a.origin < b.origin; });

  if (options.dedup_voxel > 0.0) {
    std::vector<TaggedPoint> pts;
    pts.reserve(shadows.size());
    for (const auto& s : shadows) pts.push_back(s.point);
    std::vector<Shadow> kept;
    for (const std::size_t i : dedup_voxel_indices(pts, options.dedup_voxel)) kept.push_back(shadows[i]);
    shadows = std::move(kept);
  }

  AugmentedSample out;
  out.sample_id = sample.sample_id;
  out.category = sample.category;
  out.box = sample.box;
  out.n_original = sample.object_points.size();
  out.points.reserve(out.n_original + shadows.size());
  for (const auto& p : sample.object_points) out.points.push_back(TaggedPoint::measured(p));
  out.provenance.reserve(shadows.size());
  for (const auto& s : shadows) {
    out.points.push_back(s.point);
    out.provenance.push_back(s.origin);
    if (s.origin.source == ShadowSource::Obstacle) {
      ++out.n_shadow_from_obstacle;
    } else {
      ++out.n_shadow_from_object;
    }
  }
  return out;
}

}  // namespace occlusion
