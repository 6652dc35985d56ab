#pragma once

// Normal regression from height maps: one network for non-feature points
// (3 outputs) and one for feature points (dominant then secondary normal).

#include <algorithm>
#include <functional>
#include <iterator>
#include <span>
#include <vector>

#include "fpn/classifier.hpp"

namespace fpn {

/// Components of n along (mu1, mu2, mu3).
inline Vec3 to_eigen(const Vec3& n, const EigenFrame& f) {
  if (f.degenerate) throw Error("degenerate frame");
  return f.matrix() * n;
}

inline Vec3 from_eigen(const Vec3& e, const EigenFrame& f) {
  if (f.degenerate) throw Error("degenerate frame");
  return f.matrix().transpose() * e;
}

/// Eigen-space label with the sign chosen so the mu3 component is >= 0.
/// Collinear patches still carry an orthonormal (synthetic) frame, which is
/// used as is.
inline Vec3 eigen_label(const Vec3& n, const EigenFrame& f) {
  const Vec3 e = f.matrix() * n;
  return e.z() < 0.0 ? Vec3(-e) : e;
}

struct NormalLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Sum of squared differences over the batch; gradient 2 (out - label).
inline NormalLoss normal_loss(std::span<const double> outputs, std::span<const double> labels) {
  if (outputs.size() != labels.size()) throw Error("loss operands have different sizes");
  NormalLoss r;
  r.grad.resize(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double d = outputs[i] - labels[i];
    r.loss += d * d;
    r.grad[i] = 2.0 * d;
  }
  return r;
}

enum class Branch { non_feature, feature };

inline const char* branch_name(Branch b) { return b == Branch::feature ? "feature" : "non-feature"; }

struct NormalConfig {
  int map_size = 48;
  double patch_scale = 5.0;
  bool eigen_labels = true;  // false: world-space labels (ablation)
  bool axis_swaps = true;
  nn::NormalNetConfig net{};
  nn::TrainConfig train{.epochs = 300};
};

struct NormalSample {
  HeightMap map;  // heights divided by the patch radius
  std::vector<double> label;  // 3 or 6 values
  EigenFrame frame;
  bool is_feature = false;
};

/// Whether point i of the labeled cloud trains the given branch. Feature
/// points whose multi-normals were degenerate join the non-feature pool;
/// balance points train neither branch.
inline bool in_branch(const PointLabel& l, Branch b) {
  if (b == Branch::feature) return l.feature && l.two_normals && !l.balance;
  return !l.feature || !l.two_normals;
}

inline NormalSample normal_sample(const PatchMaps& maps, const LabeledCloud& lc, std::size_t i,
                                  Branch b, const NormalConfig& cfg) {
  const PointLabel& l = lc.labels.at(i);
  auto [hm, frame] = maps.at(i, cfg.map_size);
  for (auto& v : hm.values) v /= maps.radius();
  NormalSample s;
  s.map = std::move(hm);
  s.frame = frame;
  s.is_feature = b == Branch::feature;
  auto push = [&](const Vec3& n) {
    const Vec3 e = cfg.eigen_labels ? eigen_label(n, frame)
                                    : (n.dot(frame.mu3()) < 0.0 ? Vec3(-n) : n);
    s.label.insert(s.label.end(), {e.x(), e.y(), e.z()});
  };
  push(l.n1);
  if (s.is_feature) push(l.n2);
  return s;
}

/// The same sample seen through swapped mu1/mu2 axes.
inline NormalSample swap_axes(NormalSample s, const NormalConfig& cfg) {
  s.map = swap_axes(s.map);
  s.frame = swap_axes(s.frame);
  if (cfg.eigen_labels)
    for (std::size_t k = 0; k + 2 < s.label.size(); k += 3) {
      Vec3 e = swap_axes(Vec3(s.label[k], s.label[k + 1], s.label[k + 2]));
      if (e.z() < 0.0) e = -e;
      s.label[k] = e.x();
      s.label[k + 1] = e.y();
      s.label[k + 2] = e.z();
    }
  return s;
}

/// Indices of every cloud point that trains branch b.
inline std::vector<std::size_t> branch_members(const LabeledCloud& lc, Branch b) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < lc.labels.size(); ++i)
    if (in_branch(lc.labels[i], b)) idx.push_back(i);
  return idx;
}

inline TrainedNet train_normal_net(const std::vector<const LabeledCloud*>& clouds, Branch b,
                                   const NormalConfig& cfg,
                                   const std::function<bool(int, double)>& on_epoch = {}) {
  std::vector<std::vector<std::size_t>> members;
  std::vector<PatchMaps> maps;
  std::size_t total = 0;
  for (const auto* lc : clouds) {
    maps.emplace_back(lc->noisy, cfg.patch_scale * lc->r_average);
    const auto usable = maps.back().usable();
    std::vector<std::size_t> mine;
    std::ranges::set_intersection(branch_members(*lc, b), usable, std::back_inserter(mine));
    members.push_back(std::move(mine));
    total += members.back().size();
  }
  if (total == 0) throw Error(std::string("empty ") + branch_name(b) + " training set");

  nn::SampleSource<float> src;
  const std::size_t copies = cfg.axis_swaps ? 2 : 1;
  for (const auto& m : members) src.sizes.push_back(m.size() * copies);
  src.get = [&](std::size_t m, std::size_t idx) {
    const std::size_t n = members[m].size();
    NormalSample s = normal_sample(maps[m], *clouds[m], members[m][idx % n], b, cfg);
    if (idx >= n) s = swap_axes(std::move(s), cfg);
    nn::Sample<float> out;
    out.input = to_input(s.map);
    out.target.assign(s.label.begin(), s.label.end());
    return out;
  };

  nn::NormalNetConfig net_cfg = cfg.net;
  net_cfg.input = cfg.map_size;
  TrainedNet t{nn::residual_normal_net<float>(b == Branch::feature ? 6 : 3, net_cfg), {}, {}};
  t.net.init(derive_seed(cfg.train.seed, b == Branch::feature ? "feature-net-init" : "normal-net-init"));
  t.opt = nn::AdamState<float>(t.net);
  t.report = nn::train(t.net, t.opt, src, cfg.train, on_epoch);
  return t;
}

/// Test-time shift of a feature point toward its lowest-scoring neighbour
/// by score * r_average. Ties go to the lowest index; a point whose
/// neighbours all coincide with it is returned unchanged.
inline Vec3 perturb(std::size_t i, const PatchMaps& maps, std::span<const double> scores,
                    double r_average) {
  const auto& pts = maps.points();
  const Vec3& p = pts[i];
  const Patch patch = radius_neighbors(maps.index(), p, maps.radius());
  std::size_t best = pts.size();
  for (auto j : patch.members) {
    if (j == i || (pts[j] - p).squaredNorm() == 0.0) continue;
    if (best == pts.size() || scores[j] < scores[best]) best = j;
  }
  if (best == pts.size()) return p;
  const Vec3 nu = pts[best] - p;
  return p + scores[i] * r_average * nu / nu.norm();
}

struct NormalModels {
  nn::Network<float> non_feature;  // 3 outputs
  nn::Network<float> feature;      // 6 outputs, dominant normal first
};

struct NormalPrediction {
  std::vector<Vec3> normals;
  std::size_t fallbacks = 0;  // zero-length outputs replaced by mu3
};

/// Maps a raw network output (eigen coordinates) back to a world unit normal.
inline Vec3 decode_normal(std::span<const float> out, const EigenFrame& frame, bool eigen_labels,
                          bool& fallback) {
  Vec3 e(out[0], out[1], out[2]);
  fallback = !(e.norm() > 1e-12) || !e.allFinite();
  if (fallback) return frame.mu3();
  e.normalize();
  return eigen_labels ? Vec3(frame.matrix().transpose() * e) : e;
}

inline NormalPrediction predict_normals(const NormalModels& models, const ClassifiedCloud& classes,
                                        const PatchMaps& maps, double r_average,
                                        const NormalConfig& cfg, bool use_perturbation = true) {
  const std::size_t n = maps.size();
  NormalPrediction pred;
  pred.normals.assign(n, Vec3::UnitZ());
  std::vector<std::uint8_t> fell_back(n, 0);
  parallel_for(n, [&](std::size_t i) {
    const bool feature = classes.is_feature[i] != 0;
    const Vec3 center = feature && use_perturbation ? perturb(i, maps, classes.scores, r_average)
                                                    : maps.points()[i];
    try {
      auto [hm, frame] = maps.at(center, cfg.map_size);
      for (auto& v : hm.values) v /= maps.radius();
      const auto& net = feature ? models.feature : models.non_feature;
      const auto y = net.predict(to_input(hm));
      bool fb = false;
      pred.normals[i] = decode_normal(y, frame, cfg.eigen_labels, fb);
      fell_back[i] = fb;
    } catch (const DegeneratePatch&) {
      fell_back[i] = 1;
    }
  });
  for (auto f : fell_back) pred.fallbacks += f;
  return pred;
}

}  // namespace fpn
