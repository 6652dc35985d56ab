#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fpn/common.hpp"
#include "fpn/parallel.hpp"

namespace fpn {

/// Point positions with optional per-point unit normals.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty when the cloud carries no normals

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}
  PointCloud(std::vector<Vec3> pts, std::vector<Vec3> nrm)
      : points(std::move(pts)), normals(std::move(nrm)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
};

/// Throws unless the cloud is non-empty, finite and (if present) normals are
/// unit length within `tol`.
inline void validate(const PointCloud& cloud, double tol = 1e-9) {
  if (cloud.empty()) throw Error("empty input");
  for (const auto& p : cloud.points)
    if (!p.allFinite()) throw Error("non-finite coordinate");
  if (cloud.has_normals()) {
    if (cloud.normals.size() != cloud.points.size())
      throw Error("normal count differs from point count");
    for (const auto& n : cloud.normals)
      if (!n.allFinite() || std::abs(n.norm() - 1.0) > tol)
        throw Error("normal is not unit length");
  }
}

/// Exact kd-tree over a copy of the cloud positions. Queries are read-only
/// and may run concurrently.
class SpatialIndex {
 public:
  SpatialIndex() = default;

  explicit SpatialIndex(const PointCloud& cloud) : SpatialIndex(cloud.points) {}

  explicit SpatialIndex(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw Error("empty input");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// Indices with |p_i - q| <= r, ascending.
  std::vector<std::uint32_t> radius(const Vec3& q, double r) const {
    std::vector<std::uint32_t> out;
    radius(q, r, out);
    return out;
  }

  void radius(const Vec3& q, double r, std::vector<std::uint32_t>& out) const {
    out.clear();
    if (nodes_.empty()) return;
    radius_rec(0, q, r * r, out);
    std::sort(out.begin(), out.end());
  }

  /// k nearest indices ordered by (distance, index).
  std::vector<std::uint32_t> knn(const Vec3& q, std::size_t k) const {
    std::vector<std::pair<double, std::uint32_t>> heap;
    k = std::min(k, points_.size());
    if (k == 0) return {};
    knn_rec(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<std::uint32_t> out;
    out.reserve(heap.size());
    for (const auto& e : heap) out.push_back(e.second);
    return out;
  }

  /// Nearest point index and its squared distance. `exclude` is skipped
  /// (pass size() to exclude nothing).
  std::pair<std::uint32_t, double> nearest(const Vec3& q,
                                           std::size_t exclude) const {
    std::pair<std::uint32_t, double> best{0, std::numeric_limits<double>::infinity()};
    nearest_rec(0, q, exclude, best);
    return best;
  }

  std::pair<std::uint32_t, double> nearest(const Vec3& q) const {
    return nearest(q, points_.size());
  }

 private:
  static constexpr std::uint32_t kLeafSize = 12;

  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
    Vec3 lo, hi;  // bounding box of the node's points
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = node.hi = points_[order_[begin]];
    for (std::uint32_t i = begin + 1; i < end; ++i) {
      node.lo = node.lo.cwiseMin(points_[order_[i]]);
      node.hi = node.hi.cwiseMax(points_[order_[i]]);
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    Vec3 extent = node.hi - node.lo;
    int axis = 0;
    extent.maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](std::uint32_t a, std::uint32_t b) {
                       const double pa = points_[a][axis], pb = points_[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    return id;
  }

  static double box_dist2(const Node& n, const Vec3& q) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = std::max({n.lo[k] - q[k], 0.0, q[k] - n.hi[k]});
      d2 += d * d;
    }
    return d2;
  }

  void radius_rec(std::int32_t id, const Vec3& q, double r2,
                  std::vector<std::uint32_t>& out) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > r2) return;
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t idx = order_[i];
        if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
      }
      return;
    }
    radius_rec(n.left, q, r2, out);
    radius_rec(n.right, q, r2, out);
  }

  void knn_rec(std::int32_t id, const Vec3& q, std::size_t k,
               std::vector<std::pair<double, std::uint32_t>>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_dist2(n, q) > heap.front().first) return;
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t idx = order_[i];
        std::pair<double, std::uint32_t> e{(points_[idx] - q).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push_back(e);
          std::push_heap(heap.begin(), heap.end());
        } else if (e < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = e;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    knn_rec(go_left ? n.left : n.right, q, k, heap);
    knn_rec(go_left ? n.right : n.left, q, k, heap);
  }

  void nearest_rec(std::int32_t id, const Vec3& q, std::size_t exclude,
                   std::pair<std::uint32_t, double>& best) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > best.second) return;
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t idx = order_[i];
        if (idx == exclude) continue;
        const double d2 = (points_[idx] - q).squaredNorm();
        if (d2 < best.second || (d2 == best.second && idx < best.first))
          best = {idx, d2};
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    nearest_rec(go_left ? n.left : n.right, q, exclude, best);
    nearest_rec(go_left ? n.right : n.left, q, exclude, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

inline SpatialIndex build_index(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("empty input");
  return SpatialIndex(cloud);
}

/// A query center and the cloud indices inside the closed ball around it.
struct Patch {
  Vec3 center = Vec3::Zero();
  std::vector<std::uint32_t> members;
  double radius = 0.0;
};

inline Patch radius_neighbors(const SpatialIndex& index, const Vec3& p, double r) {
  if (!(r > 0.0)) throw Error("radius must be positive");
  Patch patch;
  patch.center = p;
  patch.radius = r;
  index.radius(p, r, patch.members);
  return patch;
}

/// Mean distance from each point to its nearest other point.
inline double average_spacing(const SpatialIndex& index) {
  const auto& pts = index.points();
  if (pts.size() < 2) throw Error("average spacing needs at least 2 points");
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    sum += std::sqrt(index.nearest(pts[i], i).second);
  return sum / static_cast<double>(pts.size());
}

inline double average_spacing(const PointCloud& cloud) {
  if (cloud.size() < 2) throw Error("average spacing needs at least 2 points");
  return average_spacing(SpatialIndex(cloud));
}

inline double bbox_diagonal(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("empty input");
  Vec3 lo = cloud.points.front(), hi = lo;
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

/// Orthonormal right-handed PCA basis of a patch, eigenvalues descending.
struct EigenFrame {
  std::array<Vec3, 3> axis{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  std::array<double, 3> lambda{0.0, 0.0, 0.0};
  bool degenerate = false;  // collinear patch; axes 2 and 3 are synthetic

  const Vec3& mu1() const { return axis[0]; }
  const Vec3& mu2() const { return axis[1]; }
  const Vec3& mu3() const { return axis[2]; }

  /// Rows are mu1, mu2, mu3: multiplies world vectors into eigen coordinates.
  Mat3 matrix() const {
    Mat3 m;
    m.row(0) = axis[0].transpose();
    m.row(1) = axis[1].transpose();
    m.row(2) = axis[2].transpose();
    return m;
  }

  static EigenFrame world() { return {}; }
};

/// Flip v so its largest-magnitude component (first on ties) is positive.
inline Vec3 canonical_sign(const Vec3& v) {
  int k = 0;
  double best = std::abs(v[0]);
  for (int i = 1; i < 3; ++i)
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      k = i;
    }
  return v[k] < 0.0 ? Vec3(-v) : v;
}

/// Covariance of patch members about the patch center, normalized by the
/// member count (the center's own summand is zero).
inline Mat3 patch_covariance(const std::vector<Vec3>& points, const Patch& patch) {
  Mat3 c = Mat3::Zero();
  for (auto i : patch.members) {
    const Vec3 d = patch.center - points[i];
    c.noalias() += d * d.transpose();
  }
  if (!patch.members.empty()) c /= static_cast<double>(patch.members.size());
  return c;
}

/// Builds a frame from a symmetric covariance matrix.
inline EigenFrame frame_from_covariance(const Mat3& cov) {
  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  // Eigen returns ascending eigenvalues.
  EigenFrame f;
  for (int k = 0; k < 3; ++k) {
    f.lambda[k] = std::max(0.0, solver.eigenvalues()[2 - k]);
    f.axis[k] = solver.eigenvectors().col(2 - k);
  }
  if (!(f.lambda[0] > 0.0)) throw DegeneratePatch();
  if (f.lambda[1] <= 1e-12 * f.lambda[0]) {
    f.degenerate = true;
    f.lambda[1] = f.lambda[2] = 0.0;
    const Vec3 u = f.axis[0].normalized();
    int k = 0;
    for (int i = 1; i < 3; ++i)
      if (std::abs(u[i]) < std::abs(u[k])) k = i;
    Vec3 e = Vec3::Unit(k);
    f.axis[0] = u;
    f.axis[1] = (e - e.dot(u) * u).normalized();
    f.axis[2] = u.cross(f.axis[1]);
  }
  for (auto& a : f.axis) a = canonical_sign(a.normalized());
  if (f.axis[0].cross(f.axis[1]).dot(f.axis[2]) < 0.0) f.axis[2] = -f.axis[2];
  return f;
}

inline EigenFrame pca_frame(const std::vector<Vec3>& points, const Patch& patch) {
  if (patch.members.empty()) throw DegeneratePatch();
  return frame_from_covariance(patch_covariance(points, patch));
}

inline EigenFrame pca_frame(const PointCloud& cloud, const Patch& patch) {
  return pca_frame(cloud.points, patch);
}

/// Least-variance PCA direction per point (the classic plane-fit normal).
/// Points whose patch is degenerate get +z.
inline std::vector<Vec3> pca_normals(const SpatialIndex& index, double radius) {
  const auto& pts = index.points();
  std::vector<Vec3> normals(pts.size(), Vec3::UnitZ());
  parallel_for(pts.size(), [&](std::size_t i) {
    const Patch patch = radius_neighbors(index, pts[i], radius);
    try {
      normals[i] = pca_frame(pts, patch).mu3();
    } catch (const DegeneratePatch&) {
    }
  });
  return normals;
}

}  // namespace fpn
