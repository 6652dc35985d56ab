#pragma once

// Training data from triangle meshes: sampled clouds with feature-preserving
// normals, noise, feature/non-feature sets and multi-normal labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "fpn/geometry.hpp"
#include "fpn/heightmap.hpp"
#include "fpn/mesh.hpp"
#include "fpn/parallel.hpp"
#include "fpn/rng.hpp"

namespace fpn {

/// Noiseless samples; `cloud.normals` holds the source face normal of each
/// sample.
struct GroundTruthCloud {
  PointCloud cloud;
  std::vector<std::uint32_t> source_face;

  std::size_t size() const { return cloud.size(); }
};

/// Area-weighted uniform samples of the mesh surface.
inline GroundTruthCloud sample_mesh(const TriangleMesh& mesh, std::size_t n,
                                    std::uint64_t seed) {
  if (mesh.empty()) throw Error("empty mesh");
  if (n == 0) throw Error("sample count must be positive");
  std::vector<double> cdf(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(f);
    cdf[f] = total;
  }
  GroundTruthCloud gt;
  gt.cloud.points.resize(n);
  gt.cloud.normals.resize(n);
  gt.source_face.resize(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng(seed, "sample", i);
    const double u = rng.uniform() * total;
    auto f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    f = std::min(f, cdf.size() - 1);
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    const auto& t = mesh.faces[f];
    gt.cloud.points[i] = (1.0 - r1) * mesh.vertices[t[0]] + r1 * (1.0 - r2) * mesh.vertices[t[1]] +
                         r1 * r2 * mesh.vertices[t[2]];
    gt.cloud.normals[i] = mesh.face_normals[f];
    gt.source_face[i] = static_cast<std::uint32_t>(f);
  });
  return gt;
}

enum class VertexNormalScheme {
  weighted,  // incident face normals weighted by their corner angle
  single,    // normal of the lowest-index incident face
};

inline std::vector<Vec3> vertex_normals(const TriangleMesh& mesh, VertexNormalScheme scheme) {
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
  std::vector<std::int64_t> first(mesh.vertices.size(), -1);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f)
    for (int k = 0; k < 3; ++k) {
      const auto v = mesh.faces[f][k];
      if (first[v] < 0) first[v] = static_cast<std::int64_t>(f);
      acc[v] += mesh.corner_angle(f, k) * mesh.face_normals[f];
    }
  std::vector<Vec3> out(mesh.vertices.size());
  for (std::size_t v = 0; v < out.size(); ++v) {
    if (first[v] < 0) throw Error("isolated vertex " + std::to_string(v));
    out[v] = scheme == VertexNormalScheme::single
                 ? mesh.face_normals[static_cast<std::size_t>(first[v])]
                 : Vec3(acc[v].normalized());
  }
  return out;
}

/// Vertices where the two vertex-normal schemes disagree by more than the
/// threshold.
inline std::vector<std::uint8_t> flag_feature_vertices(const TriangleMesh& mesh,
                                                       double angle_thresh_deg = 18.0) {
  const auto w = vertex_normals(mesh, VertexNormalScheme::weighted);
  const auto s = vertex_normals(mesh, VertexNormalScheme::single);
  std::vector<std::uint8_t> flag(mesh.vertices.size());
  for (std::size_t v = 0; v < flag.size(); ++v)
    flag[v] = angle_between(w[v], s[v]) > deg2rad(angle_thresh_deg);
  return flag;
}

/// Ground-truth feature locations: flagged vertices plus points spaced at
/// most `spacing` apart along every sharp mesh edge (both endpoints flagged
/// and adjacent faces bent by more than the threshold).
inline std::vector<Vec3> detect_feature_points(const TriangleMesh& mesh,
                                               double angle_thresh_deg, double spacing) {
  if (!(spacing > 0.0)) throw Error("feature spacing must be positive");
  const auto flag = flag_feature_vertices(mesh, angle_thresh_deg);
  std::vector<Vec3> psi;
  for (std::size_t v = 0; v < flag.size(); ++v)
    if (flag[v]) psi.push_back(mesh.vertices[v]);
  for (const auto& [edge, faces] : mesh.edge_faces()) {
    if (!flag[edge.first] || !flag[edge.second] || faces.size() != 2) continue;
    if (angle_between(mesh.face_normals[faces[0]], mesh.face_normals[faces[1]]) <=
        deg2rad(angle_thresh_deg))
      continue;
    const Vec3& a = mesh.vertices[edge.first];
    const Vec3& b = mesh.vertices[edge.second];
    const auto steps = static_cast<int>(std::ceil((b - a).norm() / spacing));
    for (int k = 1; k < steps; ++k) psi.push_back(a + (b - a) * (double(k) / steps));
  }
  return psi;
}

/// Membership in the feature set: strictly closer than r_f to some
/// ground-truth feature point.
inline std::vector<std::uint8_t> label_feature_sets(const std::vector<Vec3>& points,
                                                    const std::vector<Vec3>& psi, double r_f) {
  std::vector<std::uint8_t> feature(points.size(), 0);
  if (psi.empty()) return feature;
  const SpatialIndex index(psi);
  for (std::size_t i = 0; i < points.size(); ++i)
    feature[i] = index.nearest(points[i]).second < r_f * r_f;
  return feature;
}

/// Soft plane-assignment priorities of two normals through p_f. Each member
/// contributes weights summing to one.
struct Priorities {
  double w1 = 0.0, w2 = 0.0;
};

inline Priorities priorities(const Vec3& p_f, std::span<const Vec3> members, const Vec3& n1,
                             const Vec3& n2, double sigma_f) {
  Priorities out;
  const double inv_s2 = 1.0 / (sigma_f * sigma_f);
  for (const auto& p : members) {
    const double d1 = (p - p_f).dot(n1), d2 = (p - p_f).dot(n2);
    // e1 / (e1 + e2) written as a logistic so both exponentials may underflow.
    const double t = (d1 * d1 - d2 * d2) * inv_s2;
    out.w1 += 1.0 / (1.0 + std::exp(t));
    out.w2 += 1.0 / (1.0 + std::exp(-t));
  }
  return out;
}

struct MultiNormals {
  Vec3 n1 = Vec3::UnitZ(), n2 = Vec3::UnitZ();
  double angle = 0.0;       // unsigned angle between n1 and n2
  bool degenerate = false;  // no pair bent by at least min_angle
};

/// Pair of member normals with the largest unsigned angle, lowest index pair
/// on ties. When more than two distinct normals reach the maximum (corners),
/// the two with the largest plane-assignment weight around p_f are kept.
inline MultiNormals multi_normals(const Vec3& p_f, std::span<const Vec3> positions,
                                  std::span<const Vec3> normals, double sigma_f,
                                  double min_angle = deg2rad(18.0)) {
  MultiNormals out;
  const std::size_t k = normals.size();
  if (k < 2) {
    out.degenerate = true;
    if (k == 1) out.n1 = out.n2 = normals[0];
    return out;
  }
  double best = 2.0;
  std::size_t bi = 0, bj = 1;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double c = normals[i].dot(normals[j]);
      if (c < best) {
        best = c;
        bi = i;
        bj = j;
      }
    }
  out.n1 = normals[bi];
  out.n2 = normals[bj];
  out.angle = angle_between(out.n1, out.n2);
  if (out.angle < min_angle) {
    out.degenerate = true;
    return out;
  }

  // Distinct normals taking part in a (near-)maximal pair.
  constexpr double kTieTol = 1e-9;
  std::vector<Vec3> cands;
  auto add = [&](const Vec3& n) {
    for (const auto& c : cands)
      if (angle_between(c, n) < kTieTol) return;
    cands.push_back(n);
  };
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      if (angle_between(normals[i], normals[j]) >= out.angle - kTieTol) {
        add(normals[i]);
        add(normals[j]);
      }
  if (cands.size() <= 2) return out;

  std::vector<double> weight(cands.size(), 0.0);
  const double inv_s2 = 1.0 / (sigma_f * sigma_f);
  std::vector<double> e(cands.size());
  for (const auto& p : positions) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const double d = (p - p_f).dot(cands[c]);
      e[c] = d * d * inv_s2;
      dmin = std::min(dmin, e[c]);
    }
    double sum = 0.0;
    for (auto& x : e) sum += (x = std::exp(dmin - x));
    for (std::size_t c = 0; c < cands.size(); ++c) weight[c] += e[c] / sum;
  }
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weight[a] > weight[b]; });
  out.n1 = cands[order[0]];
  out.n2 = cands[order[1]];
  out.angle = angle_between(out.n1, out.n2);
  return out;
}

/// Per-point training label.
struct PointLabel {
  bool feature = false;      // class label (1,0) when set, (0,1) otherwise
  bool two_normals = false;  // feature point labeled with an ordered normal pair
  Vec3 n1 = Vec3::UnitZ();   // dominant (or only) normal
  Vec3 n2 = Vec3::UnitZ();   // secondary normal when two_normals
  double w1 = 0.0, w2 = 0.0;
  double theta = 0.0;        // angle between the multi-normals, 0 for non-features
  bool balance = false;      // excluded from normal-regression training
};

using LabelSet = std::vector<PointLabel>;

/// Relative priority gap below which a two-normal feature point counts as a
/// balance point.
inline bool is_balance(double w1, double w2, double tau_b) {
  const double sum = w1 + w2;
  if (!(sum > 0.0)) return true;
  return (w1 - w2) / sum < tau_b;
}

inline LabelSet remove_balance_points(LabelSet labels, double tau_b) {
  for (auto& l : labels)
    l.balance = l.feature && l.two_normals && is_balance(l.w1, l.w2, tau_b);
  return labels;
}

/// Isotropic Gaussian displacement with sigma = level * bbox diagonal.
inline PointCloud add_noise(const PointCloud& cloud, double level, std::uint64_t seed) {
  if (level < 0.0) throw Error("noise level must be non-negative");
  PointCloud out = cloud;
  if (level == 0.0) return out;
  const double sigma = level * bbox_diagonal(cloud);
  parallel_for(cloud.size(), [&](std::size_t i) {
    Rng rng(seed, "noise", i);
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    out.points[i] += sigma * Vec3(x, y, z);
  });
  return out;
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

/// Frame with mu1 and mu2 exchanged and mu3 negated (still right-handed).
inline EigenFrame swap_axes(const EigenFrame& f) {
  EigenFrame s = f;
  s.axis = {f.axis[1], f.axis[0], Vec3(-f.axis[2])};
  s.lambda = {f.lambda[1], f.lambda[0], f.lambda[2]};
  return s;
}

/// The map seen through swap_axes: transposed with heights negated.
inline HeightMap swap_axes(const HeightMap& hm) {
  HeightMap out(hm.m);
  for (int y = 0; y < hm.m; ++y)
    for (int x = 0; x < hm.m; ++x) {
      out.at(x, y) = -hm.at(y, x);
      out.occupied[out.index(x, y)] = hm.occupied[hm.index(y, x)];
    }
  return out;
}

/// Eigen-space vector seen through swap_axes.
inline Vec3 swap_axes(const Vec3& eigen_coords) {
  return Vec3(eigen_coords[1], eigen_coords[0], -eigen_coords[2]);
}

/// Scale factors (times the average spacing) and thresholds of labeling.
struct LabelParams {
  double feature_angle_deg = 18.0;
  double patch_scale = 5.0;    // patch radius r
  double rf_scale = 2.0;       // feature-set radius r_f
  double sigma_f_scale = 2.0;  // priority width sigma_f
  double tau_b = 0.1;
};

/// A noisy sample with its ground truth and labels. Indices of `noisy` and
/// `gt` correspond.
struct LabeledCloud {
  std::string name;
  GroundTruthCloud gt;
  PointCloud noisy;
  std::vector<Vec3> feature_points;
  LabelSet labels;
  double r_average = 0.0;
  double noise_level = 0.0;

  double patch_radius(const LabelParams& p) const { return p.patch_scale * r_average; }
};

/// Labels every point of `noisy` against the ground truth.
inline LabelSet make_labels(const GroundTruthCloud& gt, const PointCloud& noisy,
                            const std::vector<Vec3>& psi, double r_average,
                            const LabelParams& params) {
  const std::size_t n = noisy.size();
  const double r_f = params.rf_scale * r_average;
  const double sigma_f = params.sigma_f_scale * r_average;
  const double radius = params.patch_scale * r_average;
  const auto feature = label_feature_sets(gt.cloud.points, psi, r_f);
  const SpatialIndex noisy_index(noisy);
  const SpatialIndex gt_index(gt.cloud);

  LabelSet labels(n);
  parallel_for(n, [&](std::size_t i) {
    PointLabel& l = labels[i];
    l.feature = feature[i] != 0;
    l.n1 = gt.cloud.normals[gt_index.nearest(noisy.points[i]).first];
    if (!l.feature) return;
    const Patch patch = radius_neighbors(noisy_index, noisy.points[i], radius);
    std::vector<Vec3> pos, nrm;
    pos.reserve(patch.members.size());
    nrm.reserve(patch.members.size());
    for (auto j : patch.members) {
      pos.push_back(gt.cloud.points[j]);
      nrm.push_back(gt.cloud.normals[j]);
    }
    const Vec3& pf = gt.cloud.points[i];
    const MultiNormals mn = multi_normals(pf, pos, nrm, sigma_f,
                                          deg2rad(params.feature_angle_deg));
    l.theta = mn.angle;
    if (mn.degenerate) return;
    const Priorities w = priorities(pf, pos, mn.n1, mn.n2, sigma_f);
    l.two_normals = true;
    if (w.w2 > w.w1) {
      l.n1 = mn.n2;
      l.n2 = mn.n1;
      l.w1 = w.w2;
      l.w2 = w.w1;
    } else {
      l.n1 = mn.n1;
      l.n2 = mn.n2;
      l.w1 = w.w1;
      l.w2 = w.w2;
    }
  });
  return remove_balance_points(std::move(labels), params.tau_b);
}

/// Samples, perturbs, optionally rotates and labels a mesh.
inline LabeledCloud make_labeled_cloud(TriangleMesh mesh, std::size_t n, double noise_level,
                                       std::uint64_t seed, const LabelParams& params,
                                       bool random_rotate, std::string name = {}) {
  LabeledCloud lc;
  lc.name = std::move(name);
  lc.noise_level = noise_level;
  if (random_rotate) {
    Rng rng(seed, "rotation");
    mesh.transform(random_rotation(rng));
  }
  lc.gt = sample_mesh(mesh, n, derive_seed(seed, "mesh-samples"));
  lc.noisy = add_noise(lc.gt.cloud, noise_level, derive_seed(seed, "noise-field"));
  lc.noisy.normals.clear();
  lc.r_average = average_spacing(lc.noisy);
  lc.feature_points = detect_feature_points(mesh, params.feature_angle_deg, lc.r_average / 2.0);
  lc.labels = make_labels(lc.gt, lc.noisy, lc.feature_points, lc.r_average, params);
  return lc;
}

/// Applies one rotation to every position, normal and label of the sample.
inline LabeledCloud rotate(LabeledCloud lc, const Mat3& rotation) {
  for (auto& p : lc.gt.cloud.points) p = rotation * p;
  for (auto& n : lc.gt.cloud.normals) n = rotation * n;
  for (auto& p : lc.noisy.points) p = rotation * p;
  for (auto& p : lc.feature_points) p = rotation * p;
  for (auto& l : lc.labels) {
    l.n1 = rotation * l.n1;
    l.n2 = rotation * l.n2;
  }
  return lc;
}

/// Random-rotation augmentation of a labeled sample.
inline LabeledCloud augment(LabeledCloud lc, std::uint64_t seed) {
  Rng rng(seed, "augment");
  return rotate(std::move(lc), random_rotation(rng));
}

}  // namespace fpn
