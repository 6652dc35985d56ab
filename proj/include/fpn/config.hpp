#pragma once

// Run configuration (`key = value` lines, `#` comments, unknown keys
// rejected) and dataset manifests.

#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "fpn/filter.hpp"
#include "fpn/io.hpp"

namespace fpn {

struct RunConfig {
  std::uint64_t seed = 1;

  // height maps and labels
  int map_size = 48;
  int classifier_input = 32;
  double patch_scale = 5.0;
  double rf_scale = 2.0;
  double sigma_f_scale = 2.0;
  double feature_angle_deg = 18.0;
  double tau_b = 0.1;

  // classification
  double sigma_theta_deg = 30.0;
  double threshold = 0.85;
  bool weighted_loss = true;

  // normal regression
  bool eigen_labels = true;
  bool perturbation = true;
  int normal_width = 8;
  int normal_blocks = 4;
  int normal_hidden = 64;
  std::string normal_head = "flatten";

  // training
  bool axis_swaps = true;
  int rotations = 0;  // extra randomly rotated copies of every training cloud
  int classifier_epochs = 100;
  int normal_epochs = 300;
  int per_epoch = 2000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double lr_decay = 0.9;
  int decay_every = 100;

  // data generation
  std::size_t points = 10000;
  std::vector<double> noise_levels{0.005, 0.01, 0.015, 0.02};

  // filtering
  int kappa = 6;
  double update_scale = 2.5;

  LabelParams label_params() const {
    LabelParams p;
    p.feature_angle_deg = feature_angle_deg;
    p.patch_scale = patch_scale;
    p.rf_scale = rf_scale;
    p.sigma_f_scale = sigma_f_scale;
    p.tau_b = tau_b;
    return p;
  }

  nn::TrainConfig train_config(int epochs, const char* purpose) const {
    nn::TrainConfig t;
    t.learning_rate = learning_rate;
    t.decay = lr_decay;
    t.decay_every = decay_every;
    t.batch_size = batch_size;
    t.per_epoch = per_epoch;
    t.epochs = epochs;
    t.seed = derive_seed(seed, purpose);
    return t;
  }

  ClassifierConfig classifier_config() const {
    ClassifierConfig c;
    c.map_size = map_size;
    c.input_size = classifier_input;
    c.patch_scale = patch_scale;
    c.sigma_theta_deg = sigma_theta_deg;
    c.threshold = threshold;
    c.weighted_loss = weighted_loss;
    c.axis_swaps = axis_swaps;
    c.train = train_config(classifier_epochs, "classifier-training");
    return c;
  }

  NormalConfig normal_config() const {
    NormalConfig c;
    c.map_size = map_size;
    c.patch_scale = patch_scale;
    c.eigen_labels = eigen_labels;
    c.axis_swaps = axis_swaps;
    c.net.width = normal_width;
    c.net.blocks = normal_blocks;
    c.net.hidden = normal_hidden;
    c.net.head = normal_head == "gap" ? nn::NormalHead::global_avg_pool : nn::NormalHead::flatten;
    c.train = train_config(normal_epochs, "normal-training");
    return c;
  }

  FilterConfig filter_config() const {
    FilterConfig f;
    f.kappa = kappa;
    f.patch_scale = patch_scale;
    f.update_scale = update_scale;
    return f;
  }

  /// Throws on values outside their domain.
  void check() const {
    auto positive = [](double v, const char* key) {
      if (!(v > 0.0)) throw Error(std::string(key) + " must be positive");
    };
    positive(map_size, "map_size");
    positive(classifier_input, "classifier_input");
    positive(patch_scale, "patch_scale");
    positive(rf_scale, "rf_scale");
    positive(sigma_f_scale, "sigma_f_scale");
    positive(feature_angle_deg, "feature_angle_deg");
    positive(sigma_theta_deg, "sigma_theta_deg");
    if (!(sigma_theta_deg < 90.0)) throw Error("sigma_theta_deg must be below 90");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("threshold must lie in [0, 1]");
    if (!(tau_b >= 0.0)) throw Error("tau_b must be non-negative");
    positive(normal_width, "normal_width");
    if (normal_blocks < 2) throw Error("normal_blocks must be at least 2");
    positive(normal_hidden, "normal_hidden");
    if (normal_head != "flatten" && normal_head != "gap") throw Error("normal_head must be 'flatten' or 'gap'");
    if (rotations < 0) throw Error("rotations must be non-negative");
    positive(classifier_epochs, "classifier_epochs");
    positive(normal_epochs, "normal_epochs");
    positive(per_epoch, "per_epoch");
    positive(batch_size, "batch_size");
    positive(learning_rate, "learning_rate");
    positive(lr_decay, "lr_decay");
    positive(decay_every, "decay_every");
    positive(static_cast<double>(points), "points");
    for (double n : noise_levels)
      if (!(n >= 0.0)) throw Error("noise levels must be non-negative");
    positive(kappa, "kappa");
    positive(update_scale, "update_scale");
  }

  void write(std::ostream& os) const;
};

namespace detail {

struct Field {
  std::function<void(RunConfig&, std::string_view, const io::detail::Lines&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field numeric(T RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view v, const io::detail::Lines& l) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*m = l.number(v);
            } else if constexpr (std::is_signed_v<T>) {
              const double d = l.number(v);
              if (d != std::floor(d) || std::abs(d) > 1e9) l.fail("expected an integer, got '" + std::string(v) + "'");
              c.*m = static_cast<T>(d);
            } else {
              c.*m = static_cast<T>(l.count(v));
            }
          },
          [m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return io::detail::fmt(c.*m);
            else return std::to_string(c.*m);
          }};
}

inline Field boolean(bool RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view v, const io::detail::Lines& l) {
            if (v == "true") c.*m = true;
            else if (v == "false") c.*m = false;
            else l.fail("expected true or false, got '" + std::string(v) + "'");
          },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"seed", numeric(&RunConfig::seed)},
      {"map_size", numeric(&RunConfig::map_size)},
      {"classifier_input", numeric(&RunConfig::classifier_input)},
      {"patch_scale", numeric(&RunConfig::patch_scale)},
      {"rf_scale", numeric(&RunConfig::rf_scale)},
      {"sigma_f_scale", numeric(&RunConfig::sigma_f_scale)},
      {"feature_angle_deg", numeric(&RunConfig::feature_angle_deg)},
      {"tau_b", numeric(&RunConfig::tau_b)},
      {"sigma_theta_deg", numeric(&RunConfig::sigma_theta_deg)},
      {"threshold", numeric(&RunConfig::threshold)},
      {"weighted_loss", boolean(&RunConfig::weighted_loss)},
      {"eigen_labels", boolean(&RunConfig::eigen_labels)},
      {"perturbation", boolean(&RunConfig::perturbation)},
      {"normal_width", numeric(&RunConfig::normal_width)},
      {"normal_blocks", numeric(&RunConfig::normal_blocks)},
      {"normal_hidden", numeric(&RunConfig::normal_hidden)},
      {"normal_head",
       {[](RunConfig& c, std::string_view v, const io::detail::Lines&) { c.normal_head = std::string(v); },
        [](const RunConfig& c) { return c.normal_head; }}},
      {"axis_swaps", boolean(&RunConfig::axis_swaps)},
      {"rotations", numeric(&RunConfig::rotations)},
      {"classifier_epochs", numeric(&RunConfig::classifier_epochs)},
      {"normal_epochs", numeric(&RunConfig::normal_epochs)},
      {"per_epoch", numeric(&RunConfig::per_epoch)},
      {"batch_size", numeric(&RunConfig::batch_size)},
      {"learning_rate", numeric(&RunConfig::learning_rate)},
      {"lr_decay", numeric(&RunConfig::lr_decay)},
      {"decay_every", numeric(&RunConfig::decay_every)},
      {"points", numeric(&RunConfig::points)},
      {"noise_levels",
       {[](RunConfig& c, std::string_view v, const io::detail::Lines& l) {
          c.noise_levels.clear();
          std::size_t b = 0;
          while (b <= v.size()) {
            const std::size_t e = std::min(v.find(',', b), v.size());
            c.noise_levels.push_back(l.number(v.substr(b, e - b)));
            b = e + 1;
          }
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.noise_levels.size(); ++i)
            s += (i ? "," : "") + io::detail::fmt(c.noise_levels[i]);
          return s;
        }}},
      {"kappa", numeric(&RunConfig::kappa)},
      {"update_scale", numeric(&RunConfig::update_scale)},
  };
  return f;
}

}  // namespace detail

inline void RunConfig::write(std::ostream& os) const {
  for (const auto& [key, field] : detail::fields()) os << key << " = " << field.get(*this) << "\n";
}

/// Applies `key = value` lines on top of `base`. Unknown keys, repeated keys
/// and malformed values are errors.
inline RunConfig parse_config(std::istream& in, const std::string& name = "config", RunConfig base = {}) {
  io::detail::Lines lines(in, name);
  std::string buf;
  std::set<std::string> seen;
  while (lines.next(buf)) {
    const auto hash = buf.find('#');
    std::string_view s(buf);
    if (hash != std::string::npos) s = s.substr(0, hash);
    const auto tokens = io::detail::split(s);
    if (tokens.empty()) continue;
    if (tokens.size() != 3 || tokens[1] != "=") lines.fail("expected 'key = value'");
    const std::string key(tokens[0]);
    const auto it = detail::fields().find(key);
    if (it == detail::fields().end()) lines.fail("unknown key '" + key + "'");
    if (!seen.insert(key).second) lines.fail("repeated key '" + key + "'");
    it->second.set(base, tokens[2], lines);
  }
  base.check();
  return base;
}

inline RunConfig load_config(const std::string& path) {
  auto in = io::detail::open_in(path);
  return parse_config(in, path);
}

// ---- dataset manifests -----------------------------------------------------

struct ManifestEntry {
  std::string split;  // train or test
  std::string mesh;   // path (resolved against the manifest) or builtin:<name>
  std::size_t count = 0;
  std::vector<double> noise_levels;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& which) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == which) out.push_back(e);
    return out;
  }
};

/// Lines `<split> <mesh> <count> <noise,noise,...>`. A mesh may not appear
/// in both splits.
inline DatasetManifest parse_manifest(std::istream& in, const std::string& name = "manifest",
                                      const std::filesystem::path& base_dir = {}) {
  io::detail::Lines lines(in, name);
  DatasetManifest m;
  std::map<std::string, std::string> split_of;
  std::vector<std::string_view> t;
  std::string buf;
  while (lines.next_data(t, buf)) {
    if (t.size() != 4) lines.fail("expected '<split> <mesh> <count> <noise,...>'");
    ManifestEntry e;
    e.split = std::string(t[0]);
    if (e.split != "train" && e.split != "test") lines.fail("split must be train or test, got '" + e.split + "'");
    e.mesh = std::string(t[1]);
    if (e.mesh.rfind("builtin:", 0) != 0 && !base_dir.empty() && std::filesystem::path(e.mesh).is_relative())
      e.mesh = (base_dir / e.mesh).string();
    e.count = lines.count(t[2]);
    if (e.count == 0) lines.fail("sample count must be positive");
    std::string_view v = t[3];
    std::size_t b = 0;
    while (b <= v.size()) {
      const std::size_t end = std::min(v.find(',', b), v.size());
      const double n = lines.number(v.substr(b, end - b));
      if (n < 0.0) lines.fail("noise level must be non-negative");
      e.noise_levels.push_back(n);
      b = end + 1;
    }
    const auto [it, fresh] = split_of.emplace(e.mesh, e.split);
    if (!fresh && it->second != e.split) lines.fail("mesh '" + e.mesh + "' appears in both splits");
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  auto in = io::detail::open_in(path);
  return parse_manifest(in, path, std::filesystem::path(path).parent_path());
}

/// builtin:<name> or a mesh file.
inline TriangleMesh load_mesh(const std::string& spec) {
  if (spec.rfind("builtin:", 0) == 0) {
    TriangleMesh m = shapes::by_name(spec.substr(8));
    if (m.empty()) throw Error("unknown builtin mesh '" + spec.substr(8) + "'");
    return m;
  }
  return io::read_mesh(spec);
}

}  // namespace fpn
