#include "occlusion/kitti.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace occlusion::kitti {

namespace {

constexpr std::size_t kRecordBytes = 16;

float load_le_float(const std::byte* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void store_le_float(float value, std::vector<std::byte>& out) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<std::byte>((bits >> shift) & 0xFFu));
  }
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::optional<double> to_double(std::string_view token) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Car: return "car";
    case Category::Van: return "van";
    case Category::Truck: return "truck";
    case Category::Pedestrian: return "pedestrian";
    case Category::Cyclist: return "cyclist";
    case Category::Tram: return "tram";
    case Category::Misc: return "misc";
  }
  return "misc";
}

std::optional<Category> parse_category(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const auto c = static_cast<Category>(i);
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

std::optional<Category> category_from_kitti_type(std::string_view type) {
  static const std::map<std::string_view, Category> table = {
      {"Car", Category::Car},           {"Van", Category::Van},
      {"Truck", Category::Truck},       {"Pedestrian", Category::Pedestrian},
      {"Person_sitting", Category::Misc}, {"Cyclist", Category::Cyclist},
      {"Tram", Category::Tram},         {"Misc", Category::Misc}};
  const auto it = table.find(type);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

PointReadResult read_point_binary(std::span<const std::byte> bytes) {
  if (bytes.size() % kRecordBytes != 0) {
    throw FormatError("point binary length " + std::to_string(bytes.size()) +
                          " is not a multiple of 16",
                      bytes.size() - bytes.size() % kRecordBytes);
  }
  PointReadResult result;
  result.points.reserve(bytes.size() / kRecordBytes);
  for (std::size_t off = 0; off < bytes.size(); off += kRecordBytes) {
    const float x = load_le_float(bytes.data() + off);
    const float y = load_le_float(bytes.data() + off + 4);
    const float z = load_le_float(bytes.data() + off + 8);
    const float r = load_le_float(bytes.data() + off + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(r)) {
      ++result.skipped_nonfinite;
      continue;
    }
    if (x == 0.0f && y == 0.0f && z == 0.0f) {
      ++result.dropped_origin;
      continue;
    }
    result.points.push_back({x, y, z, r});
  }
  return result;
}

std::vector<std::byte> write_point_binary(std::span<const RawPoint> points) {
  std::vector<std::byte> out;
  out.reserve(points.size() * kRecordBytes);
  for (const auto& p : points) {
    store_le_float(static_cast<float>(p.x), out);
    store_le_float(static_cast<float>(p.y), out);
    store_le_float(static_cast<float>(p.z), out);
    store_le_float(p.reflectance, out);
  }
  return out;
}

Eigen::Vector3d Calibration::rect_to_velo(const Eigen::Vector3d& p) const {
  const Eigen::Matrix4d inv = velo_to_rect.inverse();
  return (inv * p.homogeneous()).head<3>();
}

Eigen::Vector3d Calibration::rect_direction_to_velo(const Eigen::Vector3d& d) const {
  const Eigen::Matrix4d inv = velo_to_rect.inverse();
  return inv.topLeftCorner<3, 3>() * d;
}

Calibration parse_calibration(std::string_view text) {
  std::map<std::string, std::vector<double>, std::less<>> entries;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string_view line = lines[n];
    if (split_ws(line).empty()) continue;
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw FormatError("calibration line " + std::to_string(n + 1) + " has no key", n + 1);
    }
    std::vector<double> values;
    for (const auto token : split_ws(line.substr(colon + 1))) {
      const auto v = to_double(token);
      if (!v) {
        throw FormatError("calibration line " + std::to_string(n + 1) + ": bad number '" +
                              std::string(token) + "'",
                          n + 1);
      }
      values.push_back(*v);
    }
    const auto key = split_ws(line.substr(0, colon));
    if (key.size() != 1) {
      throw FormatError("calibration line " + std::to_string(n + 1) + " has a malformed key", n + 1);
    }
    entries[std::string(key.front())] = std::move(values);
  }

  auto find = [&](std::initializer_list<std::string_view> keys,
                  std::size_t size) -> const std::vector<double>& {
    for (const auto key : keys) {
      const auto it = entries.find(key);
      if (it == entries.end()) continue;
      if (it->second.size() != size) {
        throw CalibrationError("calibration entry " + std::string(key) + " has " +
                               std::to_string(it->second.size()) + " values, expected " +
                               std::to_string(size));
      }
      return it->second;
    }
    throw CalibrationError("calibration is missing " + std::string(*keys.begin()));
  };

  const auto& tr = find({"Tr_velo_to_cam", "Tr_velo_cam"}, 12);
  const auto& r0 = find({"R0_rect", "R_rect"}, 9);

  Eigen::Matrix4d tr4 = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) tr4(r, c) = tr[static_cast<std::size_t>(r * 4 + c)];
  Eigen::Matrix4d r04 = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) r04(r, c) = r0[static_cast<std::size_t>(r * 3 + c)];

  Calibration calib;
  calib.velo_to_rect = r04 * tr4;
  if (std::abs(calib.velo_to_rect.determinant()) < 1e-9) {
    throw CalibrationError("calibration transform is singular");
  }
  return calib;
}

LabelReadResult read_labels(std::string_view label_text, const Calibration& calib) {
  LabelReadResult result;
  const auto lines = split_lines(label_text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto tokens = split_ws(lines[n]);
    if (tokens.empty()) continue;
    const std::size_t line_no = n + 1;
    if (tokens.size() != 15 && tokens.size() != 16) {
      throw FormatError("label line " + std::to_string(line_no) + ": expected 15 or 16 fields, got " +
                            std::to_string(tokens.size()),
                        line_no);
    }
    std::array<double, 15> values{};
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto v = to_double(tokens[i]);
      if (!v) {
        throw FormatError("label line " + std::to_string(line_no) + ": bad number '" +
                              std::string(tokens[i]) + "'",
                          line_no);
      }
      if (i < 15) values[i] = *v;
    }

    LabelFields f;
    f.type = std::string(tokens[0]);
    f.truncation = values[1];
    f.occlusion = static_cast<int>(values[2]);
    f.alpha = values[3];
    f.bbox = {values[4], values[5], values[6], values[7]};
    f.height = values[8];
    f.width = values[9];
    f.length = values[10];
    f.location = {values[11], values[12], values[13]};
    f.rotation_y = values[14];
    if (tokens.size() == 16) f.score = to_double(tokens[15]);

    const auto category = category_from_kitti_type(f.type);
    if (!category) {
      ++result.skipped;
      continue;
    }
    if (!(f.height > 0.0 && f.width > 0.0 && f.length > 0.0)) {
      throw FormatError("label line " + std::to_string(line_no) + ": box dimensions must be positive",
                        line_no);
    }

    // Camera y points down; the label location is the bottom face center.
    const Eigen::Vector3d center_rect = f.location - Eigen::Vector3d(0.0, f.height / 2.0, 0.0);
    const Eigen::Vector3d heading_rect(std::cos(f.rotation_y), 0.0, -std::sin(f.rotation_y));
    const Eigen::Vector3d center = calib.rect_to_velo(center_rect);
    const Eigen::Vector3d heading = calib.rect_direction_to_velo(heading_rect);

    LabeledBox label;
    label.category = *category;
    label.box = OrientedBox(center, {f.length, f.width, f.height}, std::atan2(heading.y(), heading.x()));
    label.source = std::move(f);
    label.source_line = std::string(lines[n]);
    result.labels.push_back(std::move(label));
  }
  return result;
}

Frame load_frame(const std::string& frame_id, const FramePaths& paths) {
  std::ifstream in(paths.points, std::ios::binary);
  if (!in) throw FormatError("cannot open " + paths.points.string(), 0);
  const std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto cloud = read_point_binary(std::as_bytes(std::span(raw)));

  if (!std::filesystem::exists(paths.calib)) {
    throw CalibrationError("missing calibration file " + paths.calib.string());
  }
  const Calibration calib = parse_calibration(read_text_file(paths.calib));
  auto labels = read_labels(read_text_file(paths.labels), calib);

  if (cloud.points.empty()) throw FormatError("frame " + frame_id + " has no valid points", 0);

  Frame frame;
  frame.frame_id = frame_id;
  frame.points = std::move(cloud.points);
  frame.labels = std::move(labels.labels);
  frame.dropped_points = cloud.dropped_origin + cloud.skipped_nonfinite;
  frame.skipped_labels = labels.skipped;
  return frame;
}

Frustum::Frustum(const OrientedBox& box, double margin, double pad_deg) {
  const double pad = pad_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d half = box.dimensions() / 2.0 + Eigen::Vector3d::Constant(margin);
  const Eigen::Vector3d origin_local = box.to_box_frame(Eigen::Vector3d::Zero());
  const double dx = std::max(std::abs(origin_local.x()) - half.x(), 0.0);
  const double dy = std::max(std::abs(origin_local.y()) - half.y(), 0.0);
  const double near_rho = std::hypot(dx, dy);
  if (!(near_rho > 0.0)) {
    unbounded_ = true;
    return;
  }

  const auto corners = box.corners(margin);
  center_azimuth_ = std::atan2(box.center().y(), box.center().x());
  min_azimuth_ = max_azimuth_ = 0.0;
  double far_rho = 0.0;
  for (const auto& c : corners) {
    const double rel = normalize_angle(std::atan2(c.y(), c.x()) - center_azimuth_);
    min_azimuth_ = std::min(min_azimuth_, rel);
    max_azimuth_ = std::max(max_azimuth_, rel);
    far_rho = std::max(far_rho, std::hypot(c.x(), c.y()));
    far_range_ = std::max(far_range_, c.norm());
  }
  min_azimuth_ -= pad;
  max_azimuth_ += pad;

  // Elevation extremes of a box can fall inside an edge, so bound them with the
  // footprint's nearest and farthest horizontal distance instead of the corners.
  const double z_top = box.center().z() + half.z();
  const double z_bottom = box.center().z() - half.z();
  max_elevation_ = std::atan2(z_top, z_top > 0.0 ? near_rho : far_rho) + pad;
  min_elevation_ = std::atan2(z_bottom, z_bottom < 0.0 ? near_rho : far_rho) - pad;
}

bool Frustum::admits(const RawPoint& p) const {
  if (unbounded_) return true;
  if (!(range(p) < far_range_)) return false;
  const double rho = std::hypot(p.x, p.y);
  const double elevation = std::atan2(p.z, rho);
  if (elevation < min_elevation_ || elevation > max_elevation_) return false;
  const double rel = normalize_angle(std::atan2(p.y, p.x) - center_azimuth_);
  return rel >= min_azimuth_ && rel <= max_azimuth_;
}

std::string make_sample_id(const std::string& frame_id, std::size_t label_index) {
  std::ostringstream ss;
  ss << frame_id << '_' << std::setw(2) << std::setfill('0') << label_index;
  return ss.str();
}

std::vector<ObjectSample> partition_frame(const Frame& frame, const PartitionOptions& options) {
  std::vector<ObjectSample> samples;
  samples.reserve(frame.labels.size());
  for (std::size_t li = 0; li < frame.labels.size(); ++li) {
    const auto& label = frame.labels[li];
    ObjectSample sample;
    sample.sample_id = make_sample_id(frame.frame_id, li);
    sample.category = label.category;
    sample.box = label.box;
    std::optional<Frustum> frustum;
    if (options.frustum_filter) {
      frustum.emplace(label.box, options.frustum_margin, options.angular_pad_deg);
    }
    for (std::size_t i = 0; i < frame.points.size(); ++i) {
      const auto& p = frame.points[i];
      if (box_contains(label.box, p, 0.0)) {
        sample.object_points.push_back(p);
        sample.object_indices.push_back(i);
      } else if (!frustum || frustum->admits(p)) {
        sample.obstacle_points.push_back(p);
        sample.obstacle_indices.push_back(i);
      }
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace occlusion::kitti
