#pragma once

// Evaluation measures. Angles are unoriented: a normal and its negation
// count as the same prediction.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fpn/geometry.hpp"
#include "fpn/parallel.hpp"

namespace fpn {

inline void check_pairs(std::size_t a, std::size_t b) {
  if (a != b) throw Error("normal counts differ");
  if (a == 0) throw Error("no normals to compare");
}

/// Per-point unoriented angle in radians.
inline std::vector<double> angular_errors(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  check_pairs(pred.size(), gt.size());
  std::vector<double> e(pred.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = unoriented_angle(pred[i], gt[i]);
  return e;
}

/// Mean squared unoriented angle (radians^2).
inline double msae(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  double s = 0.0;
  for (double a : angular_errors(pred, gt)) s += a * a;
  return s / static_cast<double>(pred.size());
}

/// Fraction of points whose unoriented angle is strictly below tau.
inline double pgp(std::span<const Vec3> pred, std::span<const Vec3> gt, double tau_deg) {
  const double tau = deg2rad(tau_deg);
  std::size_t good = 0;
  for (double a : angular_errors(pred, gt)) good += a < tau;
  return static_cast<double>(good) / static_cast<double>(pred.size());
}

/// Distance from every query point to its nearest neighbour in `cloud`.
inline std::vector<double> nearest_distances(std::span<const Vec3> queries, const SpatialIndex& cloud) {
  std::vector<double> d(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) { d[i] = std::sqrt(cloud.nearest(queries[i]).second); });
  return d;
}

inline void check_nonempty(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw Error("metric of an empty cloud");
}

/// sqrt of the mean squared distance from each ground-truth point to the
/// closest filtered point.
inline double rmse_mean_distance(const PointCloud& gt, const PointCloud& filtered) {
  check_nonempty(gt, filtered);
  const SpatialIndex index(filtered);
  double s = 0.0;
  for (double d : nearest_distances(gt.points, index)) s += d * d;
  return std::sqrt(s / static_cast<double>(gt.size()));
}

/// Symmetric mean of squared nearest-neighbour distances.
inline double chamfer(const PointCloud& a, const PointCloud& b) {
  check_nonempty(a, b);
  auto one_way = [](const PointCloud& from, const PointCloud& to) {
    const SpatialIndex index(to);
    std::vector<double> d2(from.size());
    parallel_for(from.size(), [&](std::size_t i) { d2[i] = index.nearest(from.points[i]).second; });
    double s = 0.0;
    for (double v : d2) s += v;
    return s / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

struct Accuracy {
  double value = 1.0;
  bool empty_prediction = false;  // nothing predicted: value is the vacuous 1.0
};

/// Share of predicted feature points that are true feature points.
inline Accuracy classification_accuracy(std::span<const std::uint8_t> predicted,
                                        std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw Error("label counts differ");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i]) {
      ++total;
      hit += truth[i] != 0;
    }
  if (total == 0) return {1.0, true};
  return {static_cast<double>(hit) / static_cast<double>(total), false};
}

/// Whatever subset of measures a run produced, printed as `key = value`.
struct EvalReport {
  std::optional<double> msae, pgp10, pgp20, rmse, chamfer, class_accuracy;
  bool empty_prediction = false;
  std::size_t points = 0;

  void write(std::ostream& os) const {
    char buf[64];
    auto line = [&](const char* key, const std::optional<double>& v) {
      if (!v) return;
      std::snprintf(buf, sizeof buf, "%.17g", *v);
      os << key << " = " << buf << "\n";
    };
    os << "points = " << points << "\n";
    line("msae", msae);
    line("pgp10", pgp10);
    line("pgp20", pgp20);
    line("rmse", rmse);
    line("chamfer", chamfer);
    line("class_accuracy", class_accuracy);
    if (class_accuracy) os << "empty_prediction = " << (empty_prediction ? "true" : "false") << "\n";
  }
};

/// Blue (0) to red (max) through purple, linear in each channel.
inline std::array<int, 3> error_color(double e, double max_error) {
  const double t = max_error > 0.0 ? std::clamp(e / max_error, 0.0, 1.0) : 0.0;
  return {static_cast<int>(std::lround(255.0 * t)), 0, static_cast<int>(std::lround(255.0 * (1.0 - t)))};
}

/// ASCII PLY with one coloured vertex per point; colours span [0, max error].
inline void write_error_ply(std::ostream& os, std::span<const Vec3> points, std::span<const double> errors) {
  if (points.size() != errors.size()) throw Error("error count does not match the points");
  double max_error = 0.0;
  for (double e : errors) max_error = std::max(max_error, e);
  os << "ply\nformat ascii 1.0\n"
     << "comment error range 0 " << max_error << "\n"
     << "element vertex " << points.size() << "\n"
     << "property double x\nproperty double y\nproperty double z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
     << "property double error\nend_header\n";
  char buf[160];
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = error_color(errors[i], max_error);
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %d %d %.17g\n", points[i].x(), points[i].y(),
                  points[i].z(), c[0], c[1], c[2], errors[i]);
    os << buf;
  }
}

inline void write_error_ply(const std::string& path, std::span<const Vec3> points,
                            std::span<const double> errors) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_error_ply(os, points, errors);
}

}  // namespace fpn
