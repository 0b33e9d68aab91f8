#include "occlusion/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

namespace occlusion::dataset {

namespace {

const std::vector<std::string> kSevenClassNames = {"car",     "van",  "truck", "pedestrian",
                                                   "cyclist", "tram", "misc"};
const std::vector<std::string> kFiveClassNames = {"vehicle", "pedestrian", "cyclist", "tram",
                                                  "misc"};

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void raw(std::string_view s) {
    for (const char c : s) out_.push_back(static_cast<std::byte>(c));
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  void put(std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
  }
  std::vector<std::byte> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return get(4); }
  float f32() { return std::bit_cast<float>(get(4)); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(n, '\0');
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<char>(bytes_[pos_ + i]);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw SampleFormatError("truncated sample record (need " + std::to_string(n) + " bytes, have " +
                                  std::to_string(remaining()) + ")",
                              pos_);
    }
  }
  std::uint32_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::byte> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path);
  const std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto bytes = std::as_bytes(std::span(raw));
  return {bytes.begin(), bytes.end()};
}

}  // namespace

std::string_view scheme_name(ClassScheme scheme) {
  return scheme == ClassScheme::FiveClass ? "5class" : "7class";
}

ClassScheme parse_scheme(std::string_view name) {
  if (name == "7class") return ClassScheme::SevenClass;
  if (name == "5class") return ClassScheme::FiveClass;
  throw DatasetError("unknown class scheme '" + std::string(name) + "'");
}

const std::vector<std::string>& class_names(ClassScheme scheme) {
  return scheme == ClassScheme::FiveClass ? kFiveClassNames : kSevenClassNames;
}

std::uint32_t class_id(std::string_view class_name, ClassScheme scheme) {
  const auto& names = class_names(scheme);
  const auto it = std::find(names.begin(), names.end(), class_name);
  if (it == names.end()) {
    throw DatasetError("class '" + std::string(class_name) + "' is not part of scheme " +
                       std::string(scheme_name(scheme)));
  }
  return static_cast<std::uint32_t>(it - names.begin());
}

std::string map_classes(std::string_view name, ClassScheme scheme) {
  if (!kitti::parse_category(name)) {
    throw DatasetError("unknown category '" + std::string(name) + "'");
  }
  if (scheme == ClassScheme::FiveClass && (name == "car" || name == "van" || name == "truck")) {
    return "vehicle";
  }
  return std::string(name);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (const char c : key) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::vector<std::size_t> resample_indices(std::size_t count, std::size_t n, std::uint64_t seed) {
  if (count == 0) throw DatasetError("cannot resample an empty point set");
  if (n == 0) throw DatasetError("resample size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= n) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, count - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
  }
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  while (idx.size() < n) idx.push_back(pick(rng));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

std::vector<TaggedPoint> resample(std::span<const TaggedPoint> points, std::size_t n,
                                  std::uint64_t seed) {
  std::vector<TaggedPoint> out;
  out.reserve(n);
  for (const std::size_t i : resample_indices(points.size(), n, seed)) out.push_back(points[i]);
  return out;
}

std::string_view split_name(Split split) { return split == Split::Test ? "test" : "train"; }

std::size_t stratum_test_count(std::size_t count, double test_fraction) {
  // The slack keeps products such as 0.7 * 10 from rounding up past the integer.
  const double exact = test_fraction * static_cast<double>(count);
  return std::min(count, static_cast<std::size_t>(std::ceil(exact - 1e-9)));
}

SplitResult split_dataset(std::span<const SplitInput> samples, ClassScheme scheme,
                          double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DatasetError("test fraction must lie strictly between 0 and 1");
  }
  std::map<std::string, std::vector<std::string>> strata;
  std::set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.sample_id).second) throw DatasetError("duplicate sample id " + s.sample_id);
    strata[map_classes(kitti::category_name(s.category), scheme)].push_back(s.sample_id);
  }

  SplitResult result;
  for (const auto& name : class_names(scheme)) {
    result.train_counts[name] = 0;
    result.test_counts[name] = 0;
  }
  for (auto& [name, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(derive_seed(seed, "split/" + name));
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_test = stratum_test_count(ids.size(), test_fraction);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Split split = i < n_test ? Split::Test : Split::Train;
      result.assignment[ids[i]] = split;
    }
    result.test_counts[name] = n_test;
    result.train_counts[name] = ids.size() - n_test;
  }
  return result;
}

SampleRecord make_record(const AugmentedSample& sample, ClassScheme scheme) {
  SampleRecord record;
  record.sample_id = sample.sample_id;
  record.class_id = class_id(map_classes(kitti::category_name(sample.category), scheme), scheme);
  record.flags = scheme == ClassScheme::FiveClass ? kFlagFiveClass : 0;
  record.points = sample.points;
  return record;
}

std::vector<std::byte> write_sample(const SampleRecord& record) {
  if (record.sample_id.size() > 0xFFFFu) throw DatasetError("sample id too long");
  ByteWriter w;
  w.raw(std::string_view(kSampleMagic.data(), kSampleMagic.size()));
  w.u16(kSampleFormatVersion);
  w.u16(record.flags);
  w.u32(static_cast<std::uint32_t>(record.sample_id.size()));
  w.raw(record.sample_id);
  w.u32(record.class_id);
  w.u32(static_cast<std::uint32_t>(record.points.size()));
  for (const auto& p : record.points) {
    if (p.o > 1) throw DatasetError("occlusion flag must be 0 or 1");
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
    w.f32(static_cast<float>(p.o));
  }
  return w.take();
}

SampleRecord read_sample(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  if (r.raw(kSampleMagic.size()) != std::string_view(kSampleMagic.data(), kSampleMagic.size())) {
    throw SampleFormatError("bad sample magic", 0);
  }
  const std::size_t version_at = r.pos();
  if (const auto version = r.u16(); version != kSampleFormatVersion) {
    throw SampleFormatError("unsupported sample format version " + std::to_string(version),
                            version_at);
  }
  SampleRecord record;
  record.flags = r.u16();
  const std::uint32_t id_len = r.u32();
  record.sample_id = r.raw(id_len);
  record.class_id = r.u32();
  const std::size_t count_at = r.pos();
  const std::uint32_t n = r.u32();
  if (r.remaining() != static_cast<std::size_t>(n) * 16) {
    throw SampleFormatError("sample declares " + std::to_string(n) + " points but has " +
                                std::to_string(r.remaining()) + " payload bytes",
                            count_at);
  }
  record.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.pos();
    const float x = r.f32();
    const float y = r.f32();
    const float z = r.f32();
    const float o = r.f32();
    if (o != 0.0f && o != 1.0f) {
      throw SampleFormatError("occlusion flag must be 0 or 1", at + 12);
    }
    record.points.push_back({x, y, z, static_cast<std::uint8_t>(o)});
  }
  return record;
}

void write_sample_file(const std::string& path, const SampleRecord& record) {
  const auto bytes = write_sample(record);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("short write to " + path);
}

SampleRecord read_sample_file(const std::string& path) { return read_sample(read_file_bytes(path)); }

std::map<std::string, std::size_t> DatasetManifest::class_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& name : class_names(scheme)) counts[name] = 0;
  for (const auto& s : samples) ++counts[s.class_name];
  return counts;
}

std::map<std::string, std::size_t> DatasetManifest::category_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& name : class_names(ClassScheme::SevenClass)) counts[name] = 0;
  for (const auto& s : samples) ++counts[s.category];
  return counts;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  nlohmann::json split = nlohmann::json::object();
  for (const auto& s : samples) {
    entries.push_back({{"sample_id", s.sample_id},
                       {"frame_id", s.frame_id},
                       {"category", s.category},
                       {"class_name", s.class_name},
                       {"class_id", s.class_id},
                       {"split", split_name(s.split)},
                       {"file", s.file},
                       {"augmented_file", s.augmented_file},
                       {"n_points", s.n_points},
                       {"n_original", s.n_original},
                       {"n_shadow_from_obstacle", s.n_shadow_from_obstacle},
                       {"n_shadow_from_object", s.n_shadow_from_object}});
    split[s.sample_id] = split_name(s.split);
  }
  return {{"version", version},
          {"class_scheme", scheme_name(scheme)},
          {"class_names", class_names(scheme)},
          {"class_counts", class_counts()},
          {"category_counts", category_counts()},
          {"n_points", n_points},
          {"test_fraction", test_fraction},
          {"seed", seed},
          {"config", config.is_null() ? nlohmann::json::object() : config},
          {"frames", frames.is_null() ? nlohmann::json::object() : frames},
          {"split", split},
          {"samples", entries}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& doc) {
  DatasetManifest m;
  try {
    m.version = doc.at("version").get<std::string>();
    if (m.version != kManifestVersion) throw DatasetError("unsupported manifest version " + m.version);
    m.scheme = parse_scheme(doc.at("class_scheme").get<std::string>());
    m.n_points = doc.at("n_points").get<std::size_t>();
    m.test_fraction = doc.at("test_fraction").get<double>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.config = doc.value("config", nlohmann::json::object());
    m.frames = doc.value("frames", nlohmann::json::object());
    for (const auto& e : doc.at("samples")) {
      SampleEntry s;
      s.sample_id = e.at("sample_id").get<std::string>();
      s.frame_id = e.at("frame_id").get<std::string>();
      s.category = e.at("category").get<std::string>();
      s.class_name = e.at("class_name").get<std::string>();
      s.class_id = e.at("class_id").get<std::uint32_t>();
      const auto split = e.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DatasetError("bad split '" + split + "'");
      s.split = split == "test" ? Split::Test : Split::Train;
      s.file = e.at("file").get<std::string>();
      s.augmented_file = e.at("augmented_file").get<std::string>();
      s.n_points = e.at("n_points").get<std::size_t>();
      s.n_original = e.at("n_original").get<std::size_t>();
      s.n_shadow_from_obstacle = e.at("n_shadow_from_obstacle").get<std::size_t>();
      s.n_shadow_from_object = e.at("n_shadow_from_object").get<std::size_t>();
      m.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.sample_id).second) throw DatasetError("duplicate sample id " + s.sample_id);
    if (map_classes(s.category, scheme) != s.class_name) {
      throw DatasetError("sample " + s.sample_id + " class does not follow the scheme mapping");
    }
    if (class_id(s.class_name, scheme) != s.class_id) {
      throw DatasetError("sample " + s.sample_id + " has an inconsistent class id");
    }
  }
  if (scheme == ClassScheme::FiveClass) {
    const auto seven = category_counts();
    const auto five = class_counts();
    if (five.at("vehicle") != seven.at("car") + seven.at("van") + seven.at("truck")) {
      throw DatasetError("vehicle count differs from car + van + truck");
    }
  }
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  manifest.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path);
  out << manifest.to_json().dump(2) << '\n';
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }
  return DatasetManifest::from_json(doc);
}

}  // namespace occlusion::dataset
