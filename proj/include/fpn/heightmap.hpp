#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fpn/geometry.hpp"

namespace fpn {

/// Grid geometry of a height map. `radius` is the patch radius in model
/// units; `eta` and `sigma_g` are in cells.
struct HeightMapParams {
  int m = 48;
  double radius = 1.0;
  double eta = 8.0;
  double sigma_g = 3.2;

  /// Grid of size m with the interpolation defaults eta = m/6, sigma = eta/2.5.
  static HeightMapParams with_defaults(int m, double radius) {
    HeightMapParams p;
    p.m = m;
    p.radius = radius;
    p.eta = m / 6.0;
    p.sigma_g = p.eta / 2.5;
    return p;
  }

  void check() const {
    if (m < 8) throw Error("height map size must be at least 8");
    if (!(radius > 0.0) || !(eta > 0.0) || !(sigma_g > 0.0))
      throw Error("height map radius, eta and sigma must be positive");
  }
};

/// m x m grid of heights along mu3, row-major with x as the column index.
struct HeightMap {
  int m = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> occupied;

  HeightMap() = default;
  explicit HeightMap(int size)
      : m(size),
        values(static_cast<std::size_t>(size) * size, 0.0),
        occupied(static_cast<std::size_t>(size) * size, 0) {}

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * m + x;
  }
  double at(int x, int y) const { return values[index(x, y)]; }
  double& at(int x, int y) { return values[index(x, y)]; }
  bool is_occupied(int x, int y) const { return occupied[index(x, y)] != 0; }
};

/// Continuous grid coordinate of an in-plane offset.
inline double grid_coordinate(double offset, double radius, int m) {
  return (offset + radius) / (2.0 * radius) * m;
}

/// Cell index of a continuous coordinate: floored, clamped to [0, m-1].
inline int grid_cell(double coord, int m) {
  const double f = std::floor(coord);
  if (!(f >= 0.0)) return 0;
  if (f > m - 1) return m - 1;
  return static_cast<int>(f);
}

/// Projects patch members onto the (mu1, mu2) plane. On collisions the member
/// with the smallest |height| wins, lower member index on ties.
inline HeightMap rasterize(const std::vector<Vec3>& points, const Patch& patch,
                           const EigenFrame& frame, const HeightMapParams& params) {
  HeightMap hm(params.m);
  std::vector<std::uint32_t> owner(hm.values.size(), 0);
  for (auto idx : patch.members) {
    const Vec3 d = points[idx] - patch.center;
    const int x = grid_cell(grid_coordinate(d.dot(frame.mu1()), params.radius, params.m), params.m);
    const int y = grid_cell(grid_coordinate(d.dot(frame.mu2()), params.radius, params.m), params.m);
    const double h = d.dot(frame.mu3());
    const std::size_t c = hm.index(x, y);
    if (!hm.occupied[c]) {
      hm.occupied[c] = 1;
      hm.values[c] = h;
      owner[c] = idx;
      continue;
    }
    const double cur = std::abs(hm.values[c]), cand = std::abs(h);
    if (cand < cur || (cand == cur && idx < owner[c])) {
      hm.values[c] = h;
      owner[c] = idx;
    }
  }
  return hm;
}

inline HeightMap rasterize(const PointCloud& cloud, const Patch& patch,
                           const EigenFrame& frame, const HeightMapParams& params) {
  return rasterize(cloud.points, patch, frame, params);
}

/// Fills vacant cells with the Gaussian-weighted mean of the occupied cells
/// closer than eta. Occupied cells keep their values; vacant cells with no
/// occupied cell in range become 0.
inline HeightMap interpolate(const HeightMap& hm, const HeightMapParams& params) {
  const int m = hm.m;
  HeightMap out = hm;
  std::vector<double> num(hm.values.size(), 0.0), den(hm.values.size(), 0.0);
  const double eta2 = params.eta * params.eta;
  const double inv_s2 = 1.0 / (params.sigma_g * params.sigma_g);
  const int reach = static_cast<int>(std::ceil(params.eta));
  for (int ky = 0; ky < m; ++ky)
    for (int kx = 0; kx < m; ++kx) {
      if (!hm.is_occupied(kx, ky)) continue;
      const double hk = hm.at(kx, ky);
      for (int y = std::max(0, ky - reach); y <= std::min(m - 1, ky + reach); ++y)
        for (int x = std::max(0, kx - reach); x <= std::min(m - 1, kx + reach); ++x) {
          const std::size_t c = hm.index(x, y);
          if (hm.occupied[c]) continue;
          const double d2 = double(x - kx) * (x - kx) + double(y - ky) * (y - ky);
          if (d2 >= eta2) continue;
          const double g = std::exp(-d2 * inv_s2);
          num[c] += g * hk;
          den[c] += g;
        }
    }
  for (std::size_t c = 0; c < out.values.size(); ++c)
    if (!hm.occupied[c]) out.values[c] = den[c] > 0.0 ? num[c] / den[c] : 0.0;
  return out;
}

/// Bilinear down-sampling; output cell centers map onto source cell centers.
inline HeightMap resize(const HeightMap& hm, int target) {
  if (target > hm.m) throw Error("height map upscaling is not supported");
  if (target < 1) throw Error("height map size must be positive");
  HeightMap out(target);
  const double scale = static_cast<double>(hm.m) / target;
  auto sample = [&](int i, int& i0, int& i1, double& t) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(hm.m - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, hm.m - 1);
    t = s - i0;
  };
  for (int y = 0; y < target; ++y) {
    int y0, y1;
    double ty;
    sample(y, y0, y1, ty);
    for (int x = 0; x < target; ++x) {
      int x0, x1;
      double tx;
      sample(x, x0, x1, tx);
      const double top = (1 - tx) * hm.at(x0, y0) + tx * hm.at(x1, y0);
      const double bot = (1 - tx) * hm.at(x0, y1) + tx * hm.at(x1, y1);
      out.at(x, y) = (1 - ty) * top + ty * bot;
      out.occupied[out.index(x, y)] = 1;
    }
  }
  return out;
}

/// Dense height map of the patch around `center`, with its eigen frame.
inline std::pair<HeightMap, EigenFrame> make_height_map_at(
    const SpatialIndex& index, const Vec3& center, const HeightMapParams& params) {
  const Patch patch = radius_neighbors(index, center, params.radius);
  const EigenFrame frame = pca_frame(index.points(), patch);
  return {interpolate(rasterize(index.points(), patch, frame, params), params), frame};
}

inline std::pair<HeightMap, EigenFrame> make_height_map(
    const SpatialIndex& index, std::size_t point_index, const HeightMapParams& params) {
  return make_height_map_at(index, index.points().at(point_index), params);
}

/// Heights divided by the patch radius, as consumed by the networks.
template <class T = float>
std::vector<T> network_input(const HeightMap& hm, double radius) {
  std::vector<T> v(hm.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(hm.values[i] / radius);
  return v;
}

/// 16-bit binary PGM with the map min/max-normalized to [0, 65535].
inline void write_pgm(const HeightMap& hm, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path);
  double lo = hm.values.empty() ? 0.0 : hm.values[0], hi = lo;
  for (double v : hm.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  os << "P5\n" << hm.m << " " << hm.m << "\n65535\n";
  for (int y = 0; y < hm.m; ++y)
    for (int x = 0; x < hm.m; ++x) {
      const double t = hi > lo ? (hm.at(x, y) - lo) / (hi - lo) : 0.0;
      const auto v = static_cast<std::uint16_t>(std::lround(t * 65535.0));
      const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
      os.write(bytes, 2);
    }
}

}  // namespace fpn
