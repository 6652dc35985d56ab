#pragma once

#include <utility>

#include "fpn/heightmap.hpp"
#include "fpn/parallel.hpp"

namespace fpn {

/// Height-map factory over one immutable cloud: the spatial index plus the
/// patch radius (a multiple of the cloud's average spacing).
class PatchMaps {
 public:
  PatchMaps(const PointCloud& cloud, double radius)
      : index_(cloud), radius_(radius) {
    if (!(radius > 0.0)) throw Error("patch radius must be positive");
  }

  /// Radius = scale * average spacing of the cloud.
  static PatchMaps scaled(const PointCloud& cloud, double scale) {
    return PatchMaps(cloud, scale * average_spacing(cloud));
  }

  const SpatialIndex& index() const { return index_; }
  const std::vector<Vec3>& points() const { return index_.points(); }
  std::size_t size() const { return index_.size(); }
  double radius() const { return radius_; }

  HeightMapParams params(int m) const { return HeightMapParams::with_defaults(m, radius_); }

  std::pair<HeightMap, EigenFrame> at(const Vec3& center, int m = 48) const {
    return make_height_map_at(index_, center, params(m));
  }

  std::pair<HeightMap, EigenFrame> at(std::size_t i, int m = 48) const {
    return at(index_.points()[i], m);
  }

  /// Indices of points whose patch has a PCA frame. Isolated points (no
  /// neighbour inside the radius) are left out; training skips them.
  std::vector<std::size_t> usable() const {
    std::vector<std::uint8_t> ok(size(), 0);
    parallel_for(size(), [&](std::size_t i) {
      try {
        pca_frame(points(), radius_neighbors(index_, points()[i], radius_));
        ok[i] = 1;
      } catch (const DegeneratePatch&) {
      }
    });
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ok.size(); ++i)
      if (ok[i]) idx.push_back(i);
    return idx;
  }

 private:
  SpatialIndex index_;
  double radius_;
};

}  // namespace fpn
