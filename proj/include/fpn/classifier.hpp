#pragma once

// Feature / non-feature classification of points from their height maps.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fpn/ground_truth.hpp"
#include "fpn/nnet/architectures.hpp"
#include "fpn/nnet/train.hpp"
#include "fpn/patches.hpp"

namespace fpn {

/// g(theta) = exp(1 - (cos theta / cos sigma)^2).
inline double class_weight(double theta, double sigma_theta = deg2rad(30.0)) {
  const double c = std::cos(theta) / std::cos(sigma_theta);
  return std::exp(1.0 - c * c);
}

using Vec2d = std::array<double, 2>;

struct WeightedLoss {
  double loss = 0.0;
  std::vector<Vec2d> grad;  // d(loss)/d(output) per sample
};

/// Sum over the batch of g_i ||gamma_i - label_i||^2.
inline WeightedLoss weighted_l2_loss(std::span<const Vec2d> outputs, std::span<const Vec2d> labels,
                                     std::span<const double> weights) {
  if (outputs.size() != labels.size() || outputs.size() != weights.size())
    throw Error("loss operands have different sizes");
  WeightedLoss r;
  r.grad.resize(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i)
    for (int k = 0; k < 2; ++k) {
      const double d = outputs[i][k] - labels[i][k];
      r.loss += weights[i] * d * d;
      r.grad[i][k] = 2.0 * weights[i] * d;
    }
  return r;
}

inline constexpr Vec2d kFeatureLabel{1.0, 0.0};
inline constexpr Vec2d kNonFeatureLabel{0.0, 1.0};

struct ClassSample {
  HeightMap map;  // classifier-sized, heights divided by the patch radius
  Vec2d label = kNonFeatureLabel;
  double theta = 0.0;
  double weight = 1.0;
};

struct ClassifierConfig {
  int map_size = 48;      // height-map resolution before resizing
  int input_size = 32;    // network input
  double patch_scale = 5.0;
  double sigma_theta_deg = 30.0;
  double threshold = 0.85;
  bool weighted_loss = true;   // false: plain l2 (every weight 1)
  bool axis_swaps = true;      // also train on the mu1/mu2-swapped maps
  nn::TrainConfig train{.epochs = 100};
};

/// Map around `center`, resized and scaled for the classifier.
inline HeightMap classifier_map(const PatchMaps& maps, const Vec3& center, const ClassifierConfig& cfg) {
  HeightMap hm = resize(maps.at(center, cfg.map_size).first, cfg.input_size);
  for (auto& v : hm.values) v /= maps.radius();
  return hm;
}

inline ClassSample class_sample(const PatchMaps& maps, const LabeledCloud& lc, std::size_t i,
                                const ClassifierConfig& cfg) {
  const PointLabel& l = lc.labels.at(i);
  ClassSample s;
  s.map = classifier_map(maps, maps.points()[i], cfg);
  s.label = l.feature ? kFeatureLabel : kNonFeatureLabel;
  s.theta = l.feature ? l.theta : 0.0;
  s.weight = cfg.weighted_loss ? class_weight(s.theta, deg2rad(cfg.sigma_theta_deg)) : 1.0;
  return s;
}

inline std::vector<float> to_input(const HeightMap& hm) {
  return std::vector<float>(hm.values.begin(), hm.values.end());
}

struct TrainedNet {
  nn::Network<float> net;
  nn::AdamState<float> opt;
  nn::TrainReport report;
};

/// Lazily generated training samples over several labeled clouds. With axis
/// swaps each usable point appears twice (index >= count: swapped map).
inline nn::SampleSource<float> classifier_source(const std::vector<const LabeledCloud*>& clouds,
                                                 const std::vector<PatchMaps>& maps,
                                                 const ClassifierConfig& cfg) {
  auto members = std::make_shared<std::vector<std::vector<std::size_t>>>();
  for (const auto& m : maps) members->push_back(m.usable());
  nn::SampleSource<float> src;
  for (const auto& m : *members) src.sizes.push_back(m.size() * (cfg.axis_swaps ? 2 : 1));
  src.get = [clouds, &maps, members, cfg](std::size_t m, std::size_t idx) {
    const auto& mine = (*members)[m];
    ClassSample s = class_sample(maps[m], *clouds[m], mine[idx % mine.size()], cfg);
    if (idx >= mine.size()) s.map = swap_axes(s.map);
    nn::Sample<float> out;
    out.input = to_input(s.map);
    out.target = {static_cast<float>(s.label[0]), static_cast<float>(s.label[1])};
    out.weight = s.weight;
    return out;
  };
  return src;
}

/// Trains the LeNet-style classifier. Throws unless both classes occur.
inline TrainedNet train_classifier(const std::vector<const LabeledCloud*>& clouds,
                                   const ClassifierConfig& cfg,
                                   const std::function<bool(int, double)>& on_epoch = {}) {
  bool has_feature = false, has_plain = false;
  for (const auto* lc : clouds)
    for (const auto& l : lc->labels) (l.feature ? has_feature : has_plain) = true;
  if (!has_feature || !has_plain) throw Error("classifier training needs both classes");
  std::vector<PatchMaps> maps;
  for (const auto* lc : clouds) maps.emplace_back(lc->noisy, cfg.patch_scale * lc->r_average);
  TrainedNet t{nn::lenet_classifier<float>(cfg.input_size), {}, {}};
  t.net.init(derive_seed(cfg.train.seed, "classifier-init"));
  t.opt = nn::AdamState<float>(t.net);
  t.report = nn::train(t.net, t.opt, classifier_source(clouds, maps, cfg), cfg.train, on_epoch);
  return t;
}

struct Score {
  double value = 0.0;
  bool degenerate = false;  // (a, b) summed to ~0 after clamping
};

/// a / (a + b) after clamping negative outputs to zero.
inline Score score_from_outputs(double a, double b) {
  a = std::max(a, 0.0);
  b = std::max(b, 0.0);
  if (a + b < 1e-9) return {0.0, true};
  return {a / (a + b), false};
}

struct ClassifiedCloud {
  std::vector<double> scores;
  std::vector<std::uint8_t> is_feature;  // score > threshold
  std::size_t degenerate_scores = 0;

  std::size_t feature_count() const {
    std::size_t n = 0;
    for (auto f : is_feature) n += f;
    return n;
  }
};

inline ClassifiedCloud classify(const nn::Network<float>& net, const PatchMaps& maps,
                                const ClassifierConfig& cfg) {
  const std::size_t n = maps.size();
  ClassifiedCloud out;
  out.scores.assign(n, 0.0);
  out.is_feature.assign(n, 0);
  std::vector<std::uint8_t> degenerate(n, 0);
  parallel_for(n, [&](std::size_t i) {
    Score s{0.0, true};
    try {
      const auto y = net.predict(to_input(classifier_map(maps, maps.points()[i], cfg)));
      s = score_from_outputs(y[0], y[1]);
    } catch (const DegeneratePatch&) {
    }
    out.scores[i] = s.value;
    degenerate[i] = s.degenerate;
    out.is_feature[i] = s.value > cfg.threshold;
  });
  for (auto d : degenerate) out.degenerate_scores += d;
  return out;
}

}  // namespace fpn
