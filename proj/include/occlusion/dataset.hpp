#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusion/augment.hpp"
#include "occlusion/geometry.hpp"
#include "occlusion/kitti.hpp"

namespace occlusion::dataset {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad magic, version, truncation or flag value in a sample record.
class SampleFormatError : public std::runtime_error {
 public:
  SampleFormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

enum class ClassScheme { SevenClass, FiveClass };

std::string_view scheme_name(ClassScheme scheme);
ClassScheme parse_scheme(std::string_view name);

/// Class names of a scheme in class-id order.
const std::vector<std::string>& class_names(ClassScheme scheme);
std::uint32_t class_id(std::string_view class_name, ClassScheme scheme);

/// Identity under 7class; car, van and truck become vehicle under 5class.
/// Throws DatasetError for names outside the seven categories.
std::string map_classes(std::string_view name, ClassScheme scheme);

// -- Seeding ------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);
/// Stable per-key seed derived from a global seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);

// -- Resampling ---------------------------------------------------------------

/// Exactly n points. With at least n inputs, a uniform draw without
/// replacement; otherwise every input once plus uniform draws with replacement,
/// shuffled. Deterministic in seed.
std::vector<TaggedPoint> resample(std::span<const TaggedPoint> points, std::size_t n,
                                  std::uint64_t seed);
std::vector<std::size_t> resample_indices(std::size_t count, std::size_t n, std::uint64_t seed);

// -- Split --------------------------------------------------------------------

enum class Split { Train, Test };
std::string_view split_name(Split split);

struct SplitInput {
  std::string sample_id;
  kitti::Category category;
};

struct SplitResult {
  std::map<std::string, Split> assignment;
  std::map<std::string, std::size_t> train_counts;
  std::map<std::string, std::size_t> test_counts;
};

/// Number of test samples for a class of count samples: ceil(fraction * count).
std::size_t stratum_test_count(std::size_t count, double test_fraction);

/// Stratified by the scheme's classes; within a class the test members are the
/// first ceil(test_fraction * count) of a seeded shuffle of the sorted ids.
SplitResult split_dataset(std::span<const SplitInput> samples, ClassScheme scheme,
                          double test_fraction, std::uint64_t seed);

// -- Sample records ----------------------------------------------------------

inline constexpr std::array<char, 4> kSampleMagic = {'O', 'C', 'C', 'S'};
inline constexpr std::uint16_t kSampleFormatVersion = 1;

enum SampleFlags : std::uint16_t {
  kFlagResampled = 1u << 0,
  kFlagFiveClass = 1u << 1,
};

struct SampleRecord {
  std::string sample_id;
  std::uint32_t class_id = 0;
  std::uint16_t flags = 0;
  std::vector<TaggedPoint> points;
};

SampleRecord make_record(const AugmentedSample& sample, ClassScheme scheme);

std::vector<std::byte> write_sample(const SampleRecord& record);
SampleRecord read_sample(std::span<const std::byte> bytes);

void write_sample_file(const std::string& path, const SampleRecord& record);
SampleRecord read_sample_file(const std::string& path);

// -- Manifest -----------------------------------------------------------------

inline constexpr std::string_view kManifestVersion = "1";

struct SampleEntry {
  std::string sample_id;
  std::string frame_id;
  std::string category;     ///< seven-class name
  std::string class_name;   ///< name under the manifest scheme
  std::uint32_t class_id = 0;
  Split split = Split::Train;
  std::string file;           ///< resampled record, relative to the dataset root
  std::string augmented_file; ///< full augmented record, relative to the dataset root
  std::size_t n_points = 0;
  std::size_t n_original = 0;
  std::size_t n_shadow_from_obstacle = 0;
  std::size_t n_shadow_from_object = 0;

  std::size_t n_total() const { return n_original + n_shadow_from_obstacle + n_shadow_from_object; }
};

struct DatasetManifest {
  std::string version = std::string(kManifestVersion);
  ClassScheme scheme = ClassScheme::SevenClass;
  std::size_t n_points = 1024;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  nlohmann::json config;   ///< occlusion, ground and partition settings
  nlohmann::json frames;   ///< per-frame statistics and ground models
  std::vector<SampleEntry> samples;  ///< sorted by sample_id

  std::map<std::string, std::size_t> class_counts() const;
  std::map<std::string, std::size_t> category_counts() const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& doc);

  /// Throws DatasetError if a split/scheme/count invariant does not hold.
  void validate() const;
};

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

}  // namespace occlusion::dataset
