#pragma once

// Text formats: XYZ (optionally with normals), ASCII PLY, OFF, label and
// score dumps. Readers are strict and report the offending line; writers use
// 17 significant digits so finite values round-trip exactly.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fpn/ground_truth.hpp"
#include "fpn/mesh.hpp"

namespace fpn::io {

namespace detail {

inline std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

/// Line reader that tracks the 1-based line number.
class Lines {
 public:
  Lines(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  /// Next line; false at end of input.
  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_;
    return true;
  }

  /// Next line that is neither blank nor a '#' comment.
  bool next_data(std::vector<std::string_view>& tokens, std::string& storage) {
    while (next(storage)) {
      tokens = split(storage);
      if (!tokens.empty() && tokens[0][0] != '#') return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(name_, line_, what); }
  std::size_t line() const { return line_; }

  double number(std::string_view tok) const {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || !std::isfinite(v))
      fail("bad number '" + std::string(tok) + "'");
    return v;
  }

  std::uint64_t count(std::string_view tok) const {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) fail("bad count '" + std::string(tok) + "'");
    return v;
  }

  void expect_index(std::string_view tok, std::size_t expected) const {
    if (count(tok) != expected) fail("expected index " + std::to_string(expected) + ", got '" + std::string(tok) + "'");
  }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t line_ = 0;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  return out;
}

inline std::string extension(const std::string& path) {
  std::string e = std::filesystem::path(path).extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

}  // namespace detail

// ---- XYZ -------------------------------------------------------------------

/// One point per line, 3 values or 6 with a normal; every line alike.
inline PointCloud read_xyz(std::istream& in, const std::string& name = "xyz") {
  detail::Lines lines(in, name);
  PointCloud c;
  std::vector<std::string_view> t;
  std::string buf;
  std::size_t width = 0;
  while (lines.next_data(t, buf)) {
    if (t.size() != 3 && t.size() != 6) lines.fail("expected 3 or 6 values, got " + std::to_string(t.size()));
    if (width == 0) width = t.size();
    if (t.size() != width) lines.fail("expected " + std::to_string(width) + " values like the first line");
    c.points.emplace_back(lines.number(t[0]), lines.number(t[1]), lines.number(t[2]));
    if (width == 6) c.normals.emplace_back(lines.number(t[3]), lines.number(t[4]), lines.number(t[5]));
  }
  return c;
}

inline void write_xyz(std::ostream& os, const PointCloud& c) {
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    os << detail::fmt(p.x()) << ' ' << detail::fmt(p.y()) << ' ' << detail::fmt(p.z());
    if (c.has_normals()) {
      const Vec3& n = c.normals[i];
      os << ' ' << detail::fmt(n.x()) << ' ' << detail::fmt(n.y()) << ' ' << detail::fmt(n.z());
    }
    os << '\n';
  }
}

// ---- PLY -------------------------------------------------------------------

struct PlyData {
  PointCloud cloud;          // normals filled when nx, ny, nz are present
  std::vector<Face> faces;   // polygons fan-triangulated
};

/// ASCII PLY with a vertex element (x, y, z required; nx, ny, nz optional;
/// other scalar properties ignored) and an optional face list element.
inline PlyData read_ply(std::istream& in, const std::string& name = "ply") {
  detail::Lines lines(in, name);
  std::string buf;
  std::vector<std::string_view> t;
  if (!lines.next(buf) || detail::split(buf) != std::vector<std::string_view>{"ply"}) lines.fail("missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    bool list = false;
  };
  std::vector<Element> elements;
  bool ascii = false;
  for (;;) {
    if (!lines.next(buf)) lines.fail("unterminated header");
    t = detail::split(buf);
    if (t.empty() || t[0] == "comment" || t[0] == "obj_info") continue;
    if (t[0] == "end_header") break;
    if (t[0] == "format") {
      if (t.size() != 3 || t[1] != "ascii") lines.fail("only 'format ascii 1.0' is supported");
      ascii = true;
    } else if (t[0] == "element") {
      if (t.size() != 3) lines.fail("malformed element line");
      elements.push_back({std::string(t[1]), lines.count(t[2]), {}, false});
    } else if (t[0] == "property") {
      if (elements.empty()) lines.fail("property before any element");
      if (t.size() == 5 && t[1] == "list") {
        elements.back().list = true;
        elements.back().props.emplace_back(t[4]);
      } else if (t.size() == 3) {
        elements.back().props.emplace_back(t[2]);
      } else {
        lines.fail("malformed property line");
      }
    } else {
      lines.fail("unknown header keyword '" + std::string(t[0]) + "'");
    }
  }
  if (!ascii) lines.fail("missing format line");

  PlyData out;
  for (const auto& el : elements) {
    auto find = [&](const char* p) {
      for (std::size_t i = 0; i < el.props.size(); ++i)
        if (el.props[i] == p) return static_cast<int>(i);
      return -1;
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int inx = find("nx"), iny = find("ny"), inz = find("nz");
    const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
    if (el.name == "vertex" && (ix < 0 || iy < 0 || iz < 0)) lines.fail("vertex element lacks x, y or z");
    for (std::size_t r = 0; r < el.count; ++r) {
      if (!lines.next_data(t, buf))
        lines.fail("expected " + std::to_string(el.count) + " " + el.name + " rows, found " + std::to_string(r));
      if (el.name == "vertex") {
        if (el.list || t.size() != el.props.size())
          lines.fail("expected " + std::to_string(el.props.size()) + " vertex values, got " + std::to_string(t.size()));
        out.cloud.points.emplace_back(lines.number(t[ix]), lines.number(t[iy]), lines.number(t[iz]));
        if (normals) out.cloud.normals.emplace_back(lines.number(t[inx]), lines.number(t[iny]), lines.number(t[inz]));
      } else if (el.name == "face" && el.list) {
        const auto k = lines.count(t[0]);
        if (k < 3 || t.size() != k + 1) lines.fail("malformed face row");
        std::vector<std::uint32_t> idx(k);
        for (std::size_t j = 0; j < k; ++j) idx[j] = static_cast<std::uint32_t>(lines.count(t[j + 1]));
        for (std::size_t j = 1; j + 1 < k; ++j) out.faces.push_back({idx[0], idx[j], idx[j + 1]});
      }
    }
  }
  if (lines.next_data(t, buf)) lines.fail("unexpected data after the last element");
  return out;
}

inline void write_ply(std::ostream& os, const PointCloud& c, const std::vector<Face>& faces = {}) {
  os << "ply\nformat ascii 1.0\nelement vertex " << c.size() << "\n"
     << "property double x\nproperty double y\nproperty double z\n";
  if (c.has_normals()) os << "property double nx\nproperty double ny\nproperty double nz\n";
  if (!faces.empty()) os << "element face " << faces.size() << "\nproperty list uchar int vertex_indices\n";
  os << "end_header\n";
  write_xyz(os, c);
  for (const auto& f : faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

// ---- OFF -------------------------------------------------------------------

inline TriangleMesh read_off(std::istream& in, const std::string& name = "off") {
  detail::Lines lines(in, name);
  std::string buf;
  std::vector<std::string_view> t;
  if (!lines.next_data(t, buf) || t[0] != "OFF") lines.fail("missing 'OFF' magic");
  if (t.size() > 1) t.erase(t.begin());  // counts on the magic line
  else if (!lines.next_data(t, buf)) lines.fail("missing counts");
  if (t.size() != 3) lines.fail("expected 'vertices faces edges'");
  const auto nv = lines.count(t[0]), nf = lines.count(t[1]);
  std::vector<Vec3> verts;
  verts.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!lines.next_data(t, buf)) lines.fail("expected " + std::to_string(nv) + " vertices, found " + std::to_string(i));
    if (t.size() != 3) lines.fail("expected 3 vertex coordinates, got " + std::to_string(t.size()));
    verts.emplace_back(lines.number(t[0]), lines.number(t[1]), lines.number(t[2]));
  }
  std::vector<Face> faces;
  for (std::size_t i = 0; i < nf; ++i) {
    if (!lines.next_data(t, buf)) lines.fail("expected " + std::to_string(nf) + " faces, found " + std::to_string(i));
    const auto k = lines.count(t[0]);
    // Trailing colour values after the indices are allowed.
    if (k < 3 || t.size() < k + 1) lines.fail("malformed face row");
    std::vector<std::uint32_t> idx(k);
    for (std::size_t j = 0; j < k; ++j) {
      idx[j] = static_cast<std::uint32_t>(lines.count(t[j + 1]));
      if (idx[j] >= nv) lines.fail("vertex index " + std::to_string(idx[j]) + " out of range");
    }
    for (std::size_t j = 1; j + 1 < k; ++j) faces.push_back({idx[0], idx[j], idx[j + 1]});
  }
  if (lines.next_data(t, buf)) lines.fail("unexpected data after the last face");
  return TriangleMesh(std::move(verts), faces);
}

inline void write_off(std::ostream& os, const TriangleMesh& m) {
  os << "OFF\n" << m.vertices.size() << ' ' << m.faces.size() << " 0\n";
  for (const auto& v : m.vertices)
    os << detail::fmt(v.x()) << ' ' << detail::fmt(v.y()) << ' ' << detail::fmt(v.z()) << '\n';
  for (const auto& f : m.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

// ---- labels and scores -----------------------------------------------------

inline constexpr const char* kLabelHeader = "# fpn-labels v1";
inline constexpr const char* kScoreHeader = "# fpn-scores v1";

/// One row per point: index feature two_normals balance theta n1(3) n2(3) w1 w2.
inline void write_labels(std::ostream& os, const LabelSet& labels) {
  os << kLabelHeader << "\n# index feature two_normals balance theta n1x n1y n1z n2x n2y n2z w1 w2\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    os << i << ' ' << int(l.feature) << ' ' << int(l.two_normals) << ' ' << int(l.balance) << ' ' << detail::fmt(l.theta);
    for (const Vec3* n : {&l.n1, &l.n2})
      for (int k = 0; k < 3; ++k) os << ' ' << detail::fmt((*n)[k]);
    os << ' ' << detail::fmt(l.w1) << ' ' << detail::fmt(l.w2) << '\n';
  }
}

inline LabelSet read_labels(std::istream& in, const std::string& name = "labels") {
  detail::Lines lines(in, name);
  std::string buf;
  if (!lines.next(buf) || buf != kLabelHeader) lines.fail(std::string("missing '") + kLabelHeader + "' header");
  LabelSet out;
  std::vector<std::string_view> t;
  while (lines.next_data(t, buf)) {
    if (t.size() != 13) lines.fail("expected 13 values, got " + std::to_string(t.size()));
    lines.expect_index(t[0], out.size());
    t.erase(t.begin());
    auto flag = [&](std::string_view s) {
      if (s != "0" && s != "1") lines.fail("bad flag '" + std::string(s) + "'");
      return s == "1";
    };
    PointLabel l;
    l.feature = flag(t[0]);
    l.two_normals = flag(t[1]);
    l.balance = flag(t[2]);
    l.theta = lines.number(t[3]);
    l.n1 = Vec3(lines.number(t[4]), lines.number(t[5]), lines.number(t[6]));
    l.n2 = Vec3(lines.number(t[7]), lines.number(t[8]), lines.number(t[9]));
    l.w1 = lines.number(t[10]);
    l.w2 = lines.number(t[11]);
    out.push_back(l);
  }
  return out;
}

struct ScoreDump {
  std::vector<double> scores;
  std::vector<std::uint8_t> is_feature;
};

inline void write_scores(std::ostream& os, const ScoreDump& s) {
  os << kScoreHeader << "\n# index score is_feature\n";
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    os << i << ' ' << detail::fmt(s.scores[i]) << ' ' << int(s.is_feature[i]) << '\n';
}

inline ScoreDump read_scores(std::istream& in, const std::string& name = "scores") {
  detail::Lines lines(in, name);
  std::string buf;
  if (!lines.next(buf) || buf != kScoreHeader) lines.fail(std::string("missing '") + kScoreHeader + "' header");
  ScoreDump out;
  std::vector<std::string_view> t;
  while (lines.next_data(t, buf)) {
    if (t.size() != 3 || (t[2] != "0" && t[2] != "1")) lines.fail("expected 'index score 0|1'");
    lines.expect_index(t[0], out.scores.size());
    out.scores.push_back(lines.number(t[1]));
    out.is_feature.push_back(t[2] == "1");
  }
  return out;
}

// ---- path-based helpers ----------------------------------------------------

/// Reads .xyz / .xyzn / .txt / .ply point files.
inline PointCloud read_points(const std::string& path) {
  auto in = detail::open_in(path);
  const std::string ext = detail::extension(path);
  PointCloud c = ext == ".ply" ? read_ply(in, path).cloud : read_xyz(in, path);
  if (c.empty()) throw Error(path + ": no points");
  return c;
}

inline void write_points(const std::string& path, const PointCloud& c) {
  auto out = detail::open_out(path);
  if (detail::extension(path) == ".ply") write_ply(out, c);
  else write_xyz(out, c);
  if (!out) throw Error("write failed: " + path);
}

/// Reads an .off or .ply mesh.
inline TriangleMesh read_mesh(const std::string& path) {
  auto in = detail::open_in(path);
  const std::string ext = detail::extension(path);
  if (ext == ".off") return read_off(in, path);
  if (ext == ".ply") {
    PlyData d = read_ply(in, path);
    return TriangleMesh(std::move(d.cloud.points), d.faces);
  }
  throw Error(path + ": unsupported mesh format (use .off or .ply)");
}

}  // namespace fpn::io
