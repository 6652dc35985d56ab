#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace fpn {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Patch whose members coincide (or are too few) to define an eigen frame.
class DegeneratePatch : public Error {
 public:
  DegeneratePatch() : Error("degenerate patch") {}
};

/// Optimizer saw a non-finite gradient or parameter.
class Divergence : public Error {
 public:
  Divergence() : Error("divergence") {}
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Unsigned angle between two vectors, in radians, in [0, pi].
inline double angle_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  double c = a.dot(b) / (na * nb);
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c);
}

/// Angle between two lines (orientation ignored), in [0, pi/2].
inline double unoriented_angle(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  double c = std::abs(a.dot(b)) / (na * nb);
  c = std::min(c, 1.0);
  return std::acos(c);
}

}  // namespace fpn
