#include "occlusion/ground.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

namespace occlusion {

namespace {

constexpr int kMaxRefinePasses = 30;
constexpr double kCoreFraction = 1.0 / 3.0;
constexpr int kSettleRounds = 10;
constexpr std::size_t kMaxRefinePoints = 4096;

GroundPlane make_plane(Eigen::Vector3d normal, const Eigen::Vector3d& through) {
  normal.normalize();
  if (normal.z() < 0.0) normal = -normal;
  return {normal, -normal.dot(through)};
}

std::size_t count_inliers(const std::vector<Eigen::Vector3d>& pts, const GroundPlane& plane,
                          double threshold) {
  std::size_t n = 0;
  for (const auto& p : pts) {
    if (std::abs(plane.normal.dot(p) + plane.offset) <= threshold) ++n;
  }
  return n;
}

double percentile_z(std::span<const RawPoint> frame, double pct) {
  std::vector<double> z;
  z.reserve(frame.size());
  for (const auto& p : frame) z.push_back(p.z);
  const auto idx = static_cast<std::size_t>(
      std::floor(pct / 100.0 * static_cast<double>(z.size() - 1)));
  std::nth_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(idx), z.end());
  return z[idx];
}

// Total least squares plane through the points within threshold of plane.
std::optional<GroundPlane> refit(const std::vector<Eigen::Vector3d>& pts, const GroundPlane& plane,
                                 double threshold) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Matrix3d moments = Eigen::Matrix3d::Zero();
  std::size_t n = 0;
  for (const auto& p : pts) {
    if (std::abs(plane.normal.dot(p) + plane.offset) <= threshold) {
      sum += p;
      moments.noalias() += p * p.transpose();
      ++n;
    }
  }
  if (n < 3) return std::nullopt;
  const Eigen::Vector3d mean = sum / static_cast<double>(n);
  const Eigen::Matrix3d cov = moments - static_cast<double>(n) * mean * mean.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) return std::nullopt;
  return make_plane(solver.eigenvectors().col(0), mean);
}

// Repeated refits until the consensus set stops changing.
GroundPlane settle(const std::vector<Eigen::Vector3d>& pts, GroundPlane plane, double threshold,
                   double min_normal_z) {
  for (int pass = 0; pass < kMaxRefinePasses; ++pass) {
    const auto refined = refit(pts, plane, threshold);
    if (!refined || refined->normal.z() < min_normal_z) break;
    const bool settled = (refined->normal - plane.normal).norm() < 1e-12 &&
                         std::abs(refined->offset - plane.offset) < 1e-12;
    plane = *refined;
    if (settled) break;
  }
  return plane;
}

}  // namespace

double GroundPlane::height_at(double x, double y) const {
  return -(offset + normal.x() * x + normal.y() * y) / normal.z();
}

double GroundGrid::height_at(double x, double y) const {
  const double cx = std::floor((x - origin_x) / cell_size);
  const double cy = std::floor((y - origin_y) / cell_size);
  if (!(cx >= 0.0 && cy >= 0.0 && cx < cols && cy < rows)) return fallback;
  const auto idx = static_cast<std::size_t>(cy) * static_cast<std::size_t>(cols) +
                   static_cast<std::size_t>(cx);
  return heights[idx].value_or(fallback);
}

GroundModel::GroundModel(GroundPlane plane) {
  const double norm = plane.normal.norm();
  if (!plane.normal.allFinite() || !std::isfinite(plane.offset) || !(norm > 0.0)) {
    throw GroundFitError("ground plane must have a finite nonzero normal");
  }
  plane.normal /= norm;
  plane.offset /= norm;
  if (!(plane.normal.z() > 0.0)) {
    throw GroundFitError("ground plane normal must have a positive vertical component");
  }
  repr_ = plane;
}

GroundModel::GroundModel(GroundGrid grid) {
  if (!(grid.cell_size > 0.0) || !std::isfinite(grid.cell_size)) {
    throw GroundFitError("ground grid cell size must be > 0");
  }
  if (grid.cols < 0 || grid.rows < 0 ||
      grid.heights.size() != static_cast<std::size_t>(grid.cols) * static_cast<std::size_t>(grid.rows)) {
    throw GroundFitError("ground grid shape does not match its height table");
  }
  if (!std::isfinite(grid.fallback) || !std::isfinite(grid.origin_x) || !std::isfinite(grid.origin_y)) {
    throw GroundFitError("ground grid origin and fallback must be finite");
  }
  for (const auto& h : grid.heights) {
    if (h && !std::isfinite(*h)) throw GroundFitError("ground grid heights must be finite");
  }
  repr_ = std::move(grid);
}

double GroundModel::height(double x, double y) const {
  return std::visit([x, y](const auto& g) { return g.height_at(x, y); }, repr_);
}

double ground_height(const GroundModel& model, double x, double y) { return model.height(x, y); }

nlohmann::json GroundModel::to_json() const {
  if (is_plane()) {
    const auto& p = plane();
    return {{"form", "plane"},
            {"normal", {p.normal.x(), p.normal.y(), p.normal.z()}},
            {"offset", p.offset}};
  }
  const auto& g = grid();
  nlohmann::json heights = nlohmann::json::array();
  for (const auto& h : g.heights) heights.push_back(h ? nlohmann::json(*h) : nlohmann::json(nullptr));
  return {{"form", "grid"},     {"cell_size", g.cell_size}, {"origin", {g.origin_x, g.origin_y}},
          {"cols", g.cols},     {"rows", g.rows},           {"heights", heights},
          {"fallback", g.fallback}};
}

GroundModel GroundModel::from_json(const nlohmann::json& doc) {
  const std::string form = doc.at("form").get<std::string>();
  if (form == "plane") {
    const auto n = doc.at("normal").get<std::vector<double>>();
    if (n.size() != 3) throw GroundFitError("plane normal must have 3 components");
    return GroundModel(GroundPlane{{n[0], n[1], n[2]}, doc.at("offset").get<double>()});
  }
  if (form == "grid") {
    GroundGrid g;
    g.cell_size = doc.at("cell_size").get<double>();
    const auto origin = doc.at("origin").get<std::vector<double>>();
    if (origin.size() != 2) throw GroundFitError("grid origin must have 2 components");
    g.origin_x = origin[0];
    g.origin_y = origin[1];
    g.cols = doc.at("cols").get<int>();
    g.rows = doc.at("rows").get<int>();
    g.fallback = doc.at("fallback").get<double>();
    for (const auto& h : doc.at("heights")) {
      g.heights.push_back(h.is_null() ? std::nullopt : std::optional<double>(h.get<double>()));
    }
    return GroundModel(std::move(g));
  }
  throw GroundFitError("unknown ground model form '" + form + "'");
}

nlohmann::json GroundFitParams::to_json() const {
  return {{"inlier_threshold", inlier_threshold}, {"iterations", iterations},
          {"seed", seed},                         {"sensor_height", sensor_height},
          {"min_normal_z", min_normal_z},         {"fallback_percentile", fallback_percentile}};
}

GroundFitReport fit_ground_report(std::span<const RawPoint> frame, const GroundFitParams& params) {
  if (frame.size() < kMinGroundFitPoints) {
    throw GroundFitError("ground fit needs at least " + std::to_string(kMinGroundFitPoints) +
                         " points, got " + std::to_string(frame.size()));
  }
  if (!(params.inlier_threshold > 0.0) || params.iterations < 1) {
    throw GroundFitError("ground fit needs a positive inlier threshold and iteration count");
  }

  std::vector<Eigen::Vector3d> candidates;
  for (const auto& p : frame) {
    if (p.z <= params.sensor_height) candidates.push_back(p.vec());
  }

  // Local refinement runs on an evenly strided subset; scoring uses every candidate.
  std::vector<Eigen::Vector3d> refine_set;
  const std::size_t stride = (candidates.size() + kMaxRefinePoints - 1) / kMaxRefinePoints;
  for (std::size_t i = 0; i < candidates.size(); i += std::max<std::size_t>(stride, 1)) {
    refine_set.push_back(candidates[i]);
  }

  GroundFitReport report;
  report.candidates = candidates.size();
  std::optional<GroundPlane> best;
  std::size_t best_inliers = 0;

  if (candidates.size() >= 3) {
    std::mt19937_64 rng(params.seed);
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    for (int it = 0; it < params.iterations; ++it) {
      const std::size_t i = pick(rng);
      std::size_t j = pick(rng);
      std::size_t k = pick(rng);
      if (i == j || j == k || i == k) continue;
      const Eigen::Vector3d& a = candidates[i];
      const Eigen::Vector3d normal = (candidates[j] - a).cross(candidates[k] - a);
      const double area = normal.norm();
      const double scale = (candidates[j] - a).norm() * (candidates[k] - a).norm();
      if (!(area > 1e-9 * scale) || !(area > 0.0)) continue;
      GroundPlane hypothesis = make_plane(normal, a);
      if (hypothesis.normal.z() < params.min_normal_z) continue;
      // Settling on the full band and then on its core pulls a plane that
      // merely grazes the ground, or leans on clutter, back onto the ground.
      for (int round = 0; round < kSettleRounds; ++round) {
        const GroundPlane before = hypothesis;
        hypothesis = settle(refine_set, hypothesis, params.inlier_threshold, params.min_normal_z);
        hypothesis = settle(refine_set, hypothesis, params.inlier_threshold * kCoreFraction, params.min_normal_z);
        if ((hypothesis.normal - before.normal).norm() < 1e-12 && std::abs(hypothesis.offset - before.offset) < 1e-12) break;
      }
      const std::size_t inliers = count_inliers(candidates, hypothesis, params.inlier_threshold);
      report.hypothesis_inliers.push_back(inliers);
      if (!best || inliers > best_inliers) {
        best = hypothesis;
        best_inliers = inliers;
      }
    }
  }

  if (!best) {
    report.plane = GroundPlane::horizontal(percentile_z(frame, params.fallback_percentile));
    report.fallback = true;
    report.inliers = count_inliers(candidates, report.plane, params.inlier_threshold);
    return report;
  }

  report.plane = *best;
  report.inliers = best_inliers;
  return report;
}

GroundModel fit_ground(std::span<const RawPoint> frame, const GroundFitParams& params) {
  return GroundModel(fit_ground_report(frame, params).plane);
}

GroundModel rasterize_ground(std::span<const RawPoint> frame, const GroundPlane& plane,
                             double cell_size, double inlier_threshold) {
  if (!(cell_size > 0.0)) throw GroundFitError("ground grid cell size must be > 0");
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  bool any = false;
  for (const auto& p : frame) {
    if (!any) {
      min_x = max_x = p.x;
      min_y = max_y = p.y;
      any = true;
    }
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  GroundGrid grid;
  grid.cell_size = cell_size;
  grid.origin_x = std::floor(min_x / cell_size) * cell_size;
  grid.origin_y = std::floor(min_y / cell_size) * cell_size;
  grid.cols = any ? static_cast<int>(std::floor((max_x - grid.origin_x) / cell_size)) + 1 : 0;
  grid.rows = any ? static_cast<int>(std::floor((max_y - grid.origin_y) / cell_size)) + 1 : 0;
  const std::size_t cells = static_cast<std::size_t>(grid.cols) * static_cast<std::size_t>(grid.rows);
  std::vector<double> sum(cells, 0.0);
  std::vector<std::size_t> count(cells, 0);
  for (const auto& p : frame) {
    if (std::abs(plane.normal.dot(p.vec()) + plane.offset) > inlier_threshold) continue;
    const auto cx = static_cast<std::size_t>(std::floor((p.x - grid.origin_x) / cell_size));
    const auto cy = static_cast<std::size_t>(std::floor((p.y - grid.origin_y) / cell_size));
    const std::size_t idx = cy * static_cast<std::size_t>(grid.cols) + cx;
    sum[idx] += p.z;
    ++count[idx];
  }
  grid.heights.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    if (count[i] > 0) grid.heights[i] = sum[i] / static_cast<double>(count[i]);
  }
  grid.fallback = plane.height_at(grid.origin_x + grid.cols * cell_size / 2.0,
                                  grid.origin_y + grid.rows * cell_size / 2.0);
  return GroundModel(std::move(grid));
}

}  // namespace occlusion
