#pragma once

// Position update from estimated normals and the iterative filtering loop
// (classify, estimate normals, move points).

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fpn/normal_estimator.hpp"

namespace fpn {

/// Radii are in units of the current average spacing. The update
/// neighbourhood is smaller than the patch: with 5 r_avg the cross-edge terms
/// pull faces inward by a growing amount every iteration, and on a cube the
/// error rises again after the second round even with exact normals.
struct FilterConfig {
  int kappa = 6;              // iterations
  double patch_scale = 5.0;   // height-map patches for normal estimation
  double update_scale = 2.5;  // neighbourhood N_i of the position update

  void check() const {
    if (kappa < 1) throw Error("kappa must be at least 1");
    if (!(patch_scale > 0.0) || !(update_scale > 0.0)) throw Error("filter radii must be positive");
  }
};

/// Moves every point along the normal components of its neighbours' offsets:
///   p_i += a_i * sum_k (n_k n_k^T + n_i n_i^T)(p_k - p_i),  a_i = 1 / (3 |N_i|)
/// N_i is the closed ball of `radius` around p_i without i itself. All points
/// are updated from the old positions. A point with no neighbours stays put.
inline PointCloud position_update(const PointCloud& cloud, std::span<const Vec3> normals,
                                  const SpatialIndex& index, double radius) {
  if (normals.size() != cloud.size()) throw Error("normal count does not match the cloud");
  const auto& p = cloud.points;
  PointCloud out(p);
  parallel_for(p.size(), [&](std::size_t i) {
    const Patch patch = radius_neighbors(index, p[i], radius);
    const Mat3 ni = normals[i] * normals[i].transpose();
    Vec3 d = Vec3::Zero();
    std::size_t count = 0;
    for (auto k : patch.members) {
      if (k == i) continue;
      d += (normals[k] * normals[k].transpose() + ni) * (p[k] - p[i]);
      ++count;
    }
    if (count > 0) out.points[i] = p[i] + d / (3.0 * static_cast<double>(count));
  });
  return out;
}

/// Per-point normals plus whatever classification produced them.
struct NormalField {
  std::vector<Vec3> normals;
  std::vector<double> scores;            // empty for oracle normals
  std::vector<std::uint8_t> is_feature;  // empty for oracle normals
  std::size_t fallbacks = 0;
};

/// Supplies normals for the current positions. `maps` is built on the current
/// cloud with the current patch radius.
using NormalProvider = std::function<NormalField(const PatchMaps& maps, double r_average)>;

/// Trained networks: classify, then regress with the matching branch.
inline NormalProvider learned_normals(const nn::Network<float>& classifier, const NormalModels& models,
                                      const ClassifierConfig& ccfg, const NormalConfig& ncfg,
                                      bool use_perturbation = true) {
  return [&classifier, &models, ccfg, ncfg, use_perturbation](const PatchMaps& maps, double r_average) {
    const ClassifiedCloud classes = classify(classifier, maps, ccfg);
    NormalPrediction pred = predict_normals(models, classes, maps, r_average, ncfg, use_perturbation);
    return NormalField{std::move(pred.normals), classes.scores, classes.is_feature, pred.fallbacks};
  };
}

/// Normal of the nearest ground-truth point (reference runs without networks).
inline NormalProvider oracle_normals(const PointCloud& gt) {
  if (!gt.has_normals()) throw Error("oracle normals need a cloud with normals");
  auto index = std::make_shared<SpatialIndex>(gt);
  return [index, normals = gt.normals](const PatchMaps& maps, double) {
    NormalField f;
    f.normals.resize(maps.size());
    parallel_for(maps.size(), [&](std::size_t i) {
      f.normals[i] = normals[index->nearest(maps.points()[i]).first];
    });
    return f;
  };
}

struct IterationRecord {
  int iteration = 0;  // 1-based
  double r_average = 0.0;
  double radius = 0.0;         // patch radius
  double update_radius = 0.0;  // radius of N_i
  double mean_displacement = 0.0;
  double max_displacement = 0.0;
  std::size_t feature_count = 0;
  NormalField field;  // normals used for this step (at the positions before it)
  PointCloud cloud;   // positions after the step, with the normals attached
};

struct FilterResult {
  PointCloud cloud;
  std::vector<IterationRecord> iterations;
};

/// kappa rounds of normal estimation and position update. The average
/// spacing and both radii are recomputed from the current positions each
/// round. `on_iteration` sees every record as soon as it is complete.
inline FilterResult run_pipeline(const PointCloud& input, const NormalProvider& provider,
                                 const FilterConfig& cfg,
                                 const std::function<void(const IterationRecord&)>& on_iteration = {}) {
  cfg.check();
  validate(input);
  FilterResult res;
  PointCloud current(input.points);
  for (int it = 1; it <= cfg.kappa; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.r_average = average_spacing(current);
    rec.radius = cfg.patch_scale * rec.r_average;
    rec.update_radius = cfg.update_scale * rec.r_average;
    const PatchMaps maps(current, rec.radius);
    rec.field = provider(maps, rec.r_average);
    if (rec.field.normals.size() != current.size()) throw Error("normal provider returned the wrong count");
    for (auto f : rec.field.is_feature) rec.feature_count += f;
    PointCloud next = position_update(current, rec.field.normals, maps.index(), rec.update_radius);
    for (std::size_t i = 0; i < next.size(); ++i) {
      const double d = (next.points[i] - current.points[i]).norm();
      rec.mean_displacement += d;
      rec.max_displacement = std::max(rec.max_displacement, d);
    }
    rec.mean_displacement /= static_cast<double>(next.size());
    next.normals = rec.field.normals;
    rec.cloud = next;
    current = std::move(next);
    if (on_iteration) on_iteration(rec);
    res.iterations.push_back(std::move(rec));
  }
  res.cloud = std::move(current);
  return res;
}

}  // namespace fpn
