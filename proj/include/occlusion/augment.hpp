#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "occlusion/geometry.hpp"
#include "occlusion/ground.hpp"
#include "occlusion/kitti.hpp"

namespace occlusion {

enum class ShadowSource : std::uint8_t { Obstacle = 0, Object = 1 };

/// Where an o = 1 point came from: the source cloud, the source point's frame
/// index, and its step index along the shadow ray.
struct ShadowOrigin {
  ShadowSource source = ShadowSource::Obstacle;
  std::size_t source_index = 0;
  int k = 0;

  friend auto operator<=>(const ShadowOrigin&, const ShadowOrigin&) = default;
};

/// The 4D object sample: measured object points (o = 0) in input order, then
/// the retained shadow points (o = 1) ordered by ShadowOrigin.
struct AugmentedSample {
  std::string sample_id;
  kitti::Category category = kitti::Category::Misc;
  OrientedBox box;
  std::vector<TaggedPoint> points;
  /// One entry per shadow point, aligned with points[n_original + i].
  std::vector<ShadowOrigin> provenance;
  std::size_t n_original = 0;
  std::size_t n_shadow_from_obstacle = 0;
  std::size_t n_shadow_from_object = 0;

  std::size_t n_shadow() const { return n_shadow_from_obstacle + n_shadow_from_object; }
  std::span<const TaggedPoint> shadows() const {
    return std::span(points).subspan(n_original);
  }
};

struct AugmentOptions {
  /// Voxel edge for shadow deduplication; 0 disables it.
  double dedup_voxel = 0.0;
};

/// Casts shadow rays from every obstacle and object point, keeps the shadow
/// points inside the box inflated by cfg.box_margin, and merges them behind the
/// measured object points.
AugmentedSample augment(const kitti::ObjectSample& sample, const GroundModel& ground,
                        const OcclusionConfig& cfg, const AugmentOptions& options = {});

/// Keeps the first point of each occupied voxel of an origin-anchored grid.
std::vector<TaggedPoint> dedup_voxel(std::span<const TaggedPoint> points, double voxel);

/// Indices (into points) of the points dedup_voxel keeps.
std::vector<std::size_t> dedup_voxel_indices(std::span<const TaggedPoint> points, double voxel);

}  // namespace occlusion
