#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fpn/common.hpp"

namespace fpn {

using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh with outward (counter-clockwise winding) face normals.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> face_normals;

  TriangleMesh() = default;

  /// Validates indices, drops zero-area faces and computes face normals.
  TriangleMesh(std::vector<Vec3> verts, const std::vector<Face>& tris)
      : vertices(std::move(verts)) {
    for (const auto& f : tris) {
      for (auto v : f)
        if (v >= vertices.size()) throw Error("face index out of range");
      const Vec3 n = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      faces.push_back(f);
      face_normals.push_back(n / len);
    }
  }

  bool empty() const { return faces.empty(); }

  double face_area(std::size_t f) const {
    const auto& t = faces[f];
    return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }

  /// Interior angle of face f at its corner k.
  double corner_angle(std::size_t f, int k) const {
    const auto& t = faces[f];
    const Vec3& p = vertices[t[k]];
    return angle_between(vertices[t[(k + 1) % 3]] - p, vertices[t[(k + 2) % 3]] - p);
  }

  /// Undirected edge -> adjacent face indices.
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> edge_faces() const {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> out;
    for (std::uint32_t f = 0; f < faces.size(); ++f)
      for (int k = 0; k < 3; ++k) {
        auto a = faces[f][k], b = faces[f][(k + 1) % 3];
        if (a > b) std::swap(a, b);
        out[{a, b}].push_back(f);
      }
    return out;
  }

  void transform(const Mat3& rotation, const Vec3& translation = Vec3::Zero()) {
    for (auto& v : vertices) v = rotation * v + translation;
    for (auto& n : face_normals) n = rotation * n;
  }
};

namespace shapes {

inline TriangleMesh box(const Vec3& size) {
  const double a = size.x(), b = size.y(), c = size.z();
  std::vector<Vec3> v = {{0, 0, 0}, {a, 0, 0}, {a, b, 0}, {0, b, 0},
                         {0, 0, c}, {a, 0, c}, {a, b, c}, {0, b, c}};
  std::vector<Face> f = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7},
                         {0, 1, 5}, {0, 5, 4}, {2, 3, 7}, {2, 7, 6},
                         {1, 2, 6}, {1, 6, 5}, {0, 4, 7}, {0, 7, 3}};
  return TriangleMesh(std::move(v), f);
}

/// Unit cube [0,1]^3.
inline TriangleMesh cube() { return box(Vec3(1, 1, 1)); }

inline TriangleMesh octahedron() {
  std::vector<Vec3> v = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<Face> f = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
                         {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  return TriangleMesh(std::move(v), f);
}

/// Open fold: two unit squares sharing the y-axis edge with the given interior
/// dihedral angle (180 = flat). Both faces have +z-ish normals.
inline TriangleMesh wedge(double dihedral_deg, double width = 1.0, double length = 1.0) {
  const double half = deg2rad(180.0 - dihedral_deg) / 2.0;
  const double cx = width * std::cos(half), cz = -width * std::sin(half);
  std::vector<Vec3> v = {{0, 0, 0}, {0, length, 0}, {cx, 0, cz}, {cx, length, cz},
                         {-cx, 0, cz}, {-cx, length, cz}};
  std::vector<Face> f = {{0, 2, 3}, {0, 3, 1}, {0, 1, 5}, {0, 5, 4}};
  return TriangleMesh(std::move(v), f);
}

/// Closed triangular prism whose top ridge has the given interior angle.
inline TriangleMesh prism(double apex_deg = 90.0, double depth = 1.0) {
  const double half = deg2rad(apex_deg) / 2.0;
  const double w = 0.5, h = w / std::tan(half);
  std::vector<Vec3> v = {{-w, 0, 0}, {w, 0, 0}, {0, 0, h},
                         {-w, depth, 0}, {w, depth, 0}, {0, depth, h}};
  std::vector<Face> f = {{0, 1, 2}, {3, 5, 4},   // end caps
                         {0, 4, 1}, {0, 3, 4},   // base
                         {1, 4, 5}, {1, 5, 2},   // right slope
                         {2, 3, 0}, {2, 5, 3}};  // left slope
  return TriangleMesh(std::move(v), f);
}

/// Icosphere of the given subdivision level, radius 1.
inline TriangleMesh sphere(int subdivisions = 3) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                         {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                         {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
                         {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                         {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
                         {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto id = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]),
                 c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  return TriangleMesh(std::move(v), f);
}

/// Closed cylinder along z with flat caps.
inline TriangleMesh cylinder(int segments = 48, double radius = 0.5, double height = 1.0) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int k = 0; k < segments; ++k) {
    const double a = 2.0 * std::numbers::pi * k / segments;
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), height);
  }
  const auto bottom = static_cast<std::uint32_t>(v.size());
  v.emplace_back(0, 0, 0);
  const auto top = static_cast<std::uint32_t>(v.size());
  v.emplace_back(0, 0, height);
  for (int k = 0; k < segments; ++k) {
    const auto b0 = static_cast<std::uint32_t>(2 * k), t0 = b0 + 1;
    const auto b1 = static_cast<std::uint32_t>(2 * ((k + 1) % segments)), t1 = b1 + 1;
    f.push_back({b0, b1, t1});
    f.push_back({b0, t1, t0});
    f.push_back({bottom, b1, b0});
    f.push_back({top, t0, t1});
  }
  return TriangleMesh(std::move(v), f);
}

/// Built-in shape by name: cube, box, octahedron, wedge, prism, sphere,
/// cylinder. Returns an empty mesh for unknown names.
inline TriangleMesh by_name(const std::string& name) {
  if (name == "cube") return cube();
  if (name == "box") return box(Vec3(1.0, 0.6, 0.35));
  if (name == "octahedron") return octahedron();
  if (name == "wedge") return wedge(90.0);
  if (name == "prism") return prism(90.0);
  if (name == "sphere") return sphere(3);
  if (name == "cylinder") return cylinder();
  return {};
}

}  // namespace shapes
}  // namespace fpn
