#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "fpn/normal_estimator.hpp"
#include "oracles.hpp"

using namespace fpn;

namespace {

EigenFrame random_frame(Rng& rng) {
  const Mat3 r = random_rotation(rng);
  EigenFrame f;
  f.axis = {Vec3(r.col(0)), Vec3(r.col(1)), Vec3(r.col(2))};
  f.lambda = {3.0, 2.0, 1.0};
  return f;
}

}  // namespace

TEST(EigenCoordinates, RoundTrip) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const EigenFrame f = random_frame(rng);
    const Vec3 n = oracle::random_unit(rng);
    const Vec3 e = to_eigen(n, f);
    EXPECT_NEAR(e.x(), n.dot(f.mu1()), 1e-12);
    EXPECT_NEAR(e.z(), n.dot(f.mu3()), 1e-12);
    EXPECT_LT((from_eigen(e, f) - n).norm(), 1e-12);
  }
}

TEST(EigenCoordinates, WorldFrameIsIdentity) {
  EigenFrame f;
  f.axis = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  const Vec3 n = Vec3(1, -2, 3).normalized();
  EXPECT_EQ(to_eigen(n, f), n);
  Rng rng(3);
  const EigenFrame g = random_frame(rng);
  EXPECT_LT((to_eigen(g.mu3(), g) - Vec3::UnitZ()).norm(), 1e-15);
}

TEST(EigenCoordinates, DegenerateFrameThrows) {
  EigenFrame f;
  f.degenerate = true;
  EXPECT_THROW(to_eigen(Vec3::UnitZ(), f), Error);
  EXPECT_THROW(from_eigen(Vec3::UnitZ(), f), Error);
}

TEST(EigenCoordinates, LabelSignFollowsMu3) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const EigenFrame f = random_frame(rng);
    const Vec3 n = oracle::random_unit(rng);
    const Vec3 e = eigen_label(n, f);
    EXPECT_GE(e.z(), 0.0);
    EXPECT_LT((e - eigen_label(-n, f)).norm(), 1e-15);
  }
}

TEST(EigenCoordinates, SwapKeepsLabelConsistentWithFrame) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const EigenFrame f = random_frame(rng);
    const Vec3 n = oracle::random_unit(rng);
    Vec3 swapped = swap_axes(eigen_label(n, f));
    if (swapped.z() < 0.0) swapped = -swapped;
    EXPECT_LT((swapped - eigen_label(n, swap_axes(f))).norm(), 1e-12);
  }
}

TEST(NormalLoss, HandComputed) {
  const std::vector<double> out{1.0, 0.0, 0.0}, lab{0.0, 0.0, 1.0};
  const auto r = normal_loss(out, lab);
  EXPECT_NEAR(r.loss, 2.0, 1e-15);
  EXPECT_EQ(r.grad, (std::vector<double>{2.0, 0.0, -2.0}));
  EXPECT_THROW(normal_loss(out, std::vector<double>(6)), Error);
}

TEST(NormalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  std::vector<double> out(6), lab(6);
  for (auto& v : out) v = rng.normal();
  for (auto& v : lab) v = rng.normal();
  const auto base = normal_loss(out, lab);
  const double h = 1e-6;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out, m = out;
    p[i] += h;
    m[i] -= h;
    EXPECT_NEAR((normal_loss(p, lab).loss - normal_loss(m, lab).loss) / (2 * h), base.grad[i], 1e-6);
  }
}

TEST(Branches, Membership) {
  PointLabel plain;
  EXPECT_TRUE(in_branch(plain, Branch::non_feature));
  EXPECT_FALSE(in_branch(plain, Branch::feature));
  PointLabel crease;
  crease.feature = crease.two_normals = true;
  EXPECT_TRUE(in_branch(crease, Branch::feature));
  EXPECT_FALSE(in_branch(crease, Branch::non_feature));
  crease.balance = true;
  EXPECT_FALSE(in_branch(crease, Branch::feature));
  EXPECT_FALSE(in_branch(crease, Branch::non_feature));
  PointLabel flat_feature;
  flat_feature.feature = true;
  EXPECT_TRUE(in_branch(flat_feature, Branch::non_feature));
  EXPECT_FALSE(in_branch(flat_feature, Branch::feature));
}

TEST(Decode, OutputIsUnitAndZeroFallsBack) {
  Rng rng(9);
  const EigenFrame f = random_frame(rng);
  bool fb = true;
  const std::vector<float> out{0.3f, -0.2f, 2.0f};
  const Vec3 n = decode_normal(out, f, true, fb);
  EXPECT_FALSE(fb);
  EXPECT_NEAR(n.norm(), 1.0, 1e-12);
  const Vec3 e = Vec3(0.3f, -0.2f, 2.0f).normalized();
  EXPECT_LT((n - from_eigen(e, f)).norm(), 1e-12);

  const std::vector<float> zero{0.0f, 0.0f, 0.0f};
  EXPECT_EQ(decode_normal(zero, f, true, fb), f.mu3());
  EXPECT_TRUE(fb);
  const std::vector<float> bad{NAN, 0.0f, 1.0f};
  EXPECT_EQ(decode_normal(bad, f, true, fb), f.mu3());
  EXPECT_TRUE(fb);
  // World labels are used as they are.
  EXPECT_LT((decode_normal(out, f, false, fb) - e).norm(), 1e-12);
}

TEST(Perturb, MovesTowardLowestScoringNeighbour) {
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(-1, 0, 0), Vec3(5, 5, 5)};
  const PatchMaps maps(c, 1.5);
  const std::vector<double> scores{0.9, 0.5, 0.1, 0.3, 0.0};
  const Vec3 p = perturb(0, maps, scores, 0.2);
  EXPECT_LT((p - Vec3(0, 0.9 * 0.2, 0)).norm(), 1e-15);
}

TEST(Perturb, StepIsScoreTimesSpacing) {
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 0.5, 0)};
  const PatchMaps maps(c, 1.5);
  EXPECT_LT((perturb(0, maps, std::vector<double>{0.9, 0.0, 0.5}, 0.1) - Vec3(0.09, 0, 0)).norm(), 1e-15);
  EXPECT_EQ(perturb(0, maps, std::vector<double>{0.0, 0.0, 0.5}, 0.1), Vec3(0, 0, 0));
}

TEST(Perturb, TiesGoToLowestIndex) {
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(0, 0, 1), Vec3(1, 0, 0)};
  const PatchMaps maps(c, 1.5);
  const std::vector<double> scores{1.0, 0.2, 0.2};
  EXPECT_LT((perturb(0, maps, scores, 0.5) - Vec3(0, 0, 0.5)).norm(), 1e-15);
}

TEST(Perturb, IgnoresCoincidentNeighbours) {
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const PatchMaps maps(c, 1.5);
  const std::vector<double> scores{0.5, 0.0, 0.4};
  EXPECT_LT((perturb(0, maps, scores, 1.0) - Vec3(0.5, 0, 0)).norm(), 1e-15);
  PointCloud lone;
  lone.points = {Vec3(1, 2, 3), Vec3(1, 2, 3)};
  const PatchMaps m2(lone, 1.0);
  const std::vector<double> s2{0.9, 0.1};
  EXPECT_EQ(perturb(0, m2, s2, 1.0), Vec3(1, 2, 3));
}

class NormalData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cube_ = new LabeledCloud(make_labeled_cloud(shapes::cube(), 3000, 0.0, 31, LabelParams{}, false, "cube"));
  }
  static void TearDownTestSuite() {
    delete cube_;
    cube_ = nullptr;
  }
  static LabeledCloud* cube_;
};

LabeledCloud* NormalData::cube_ = nullptr;

TEST_F(NormalData, SamplesHaveUnitEigenLabels) {
  NormalConfig cfg;
  const PatchMaps maps(cube_->noisy, cfg.patch_scale * cube_->r_average);
  for (Branch b : {Branch::non_feature, Branch::feature}) {
    const auto members = branch_members(*cube_, b);
    ASSERT_FALSE(members.empty()) << branch_name(b);
    for (std::size_t k = 0; k < members.size(); k += 23) {
      const NormalSample s = normal_sample(maps, *cube_, members[k], b, cfg);
      ASSERT_EQ(s.label.size(), b == Branch::feature ? 6u : 3u);
      EXPECT_EQ(s.map.m, cfg.map_size);
      for (std::size_t j = 0; j < s.label.size(); j += 3) {
        const Vec3 e(s.label[j], s.label[j + 1], s.label[j + 2]);
        EXPECT_NEAR(e.norm(), 1.0, 1e-12);
        EXPECT_GE(e.z(), 0.0);
      }
      const Vec3 world = from_eigen(Vec3(s.label[0], s.label[1], s.label[2]), s.frame);
      EXPECT_NEAR(std::abs(world.dot(cube_->labels[members[k]].n1)), 1.0, 1e-12);
    }
  }
}

TEST_F(NormalData, SwappedSampleDecodesToSameNormal) {
  NormalConfig cfg;
  const PatchMaps maps(cube_->noisy, cfg.patch_scale * cube_->r_average);
  const auto members = branch_members(*cube_, Branch::feature);
  for (std::size_t k = 0; k < members.size(); k += 11) {
    const NormalSample s = normal_sample(maps, *cube_, members[k], Branch::feature, cfg);
    const NormalSample w = swap_axes(s, cfg);
    for (std::size_t j = 0; j < 6; j += 3) {
      const Vec3 a = from_eigen(Vec3(s.label[j], s.label[j + 1], s.label[j + 2]), s.frame);
      const Vec3 b = from_eigen(Vec3(w.label[j], w.label[j + 1], w.label[j + 2]), w.frame);
      EXPECT_NEAR(std::abs(a.dot(b)), 1.0, 1e-12);
      EXPECT_GE(w.label[j + 2], 0.0);
    }
  }
}

TEST_F(NormalData, ConstantLabelConverges) {
  // Every target is the same vector: the network only has to learn a bias.
  NormalConfig cfg;
  cfg.net.width = 4;
  const PatchMaps maps(cube_->noisy, cfg.patch_scale * cube_->r_average);
  std::vector<nn::Sample<float>> samples;
  for (std::size_t i = 0; i < 32; ++i) {
    const NormalSample s = normal_sample(maps, *cube_, i * 50, Branch::non_feature, cfg);
    samples.push_back({to_input(s.map), {0.0f, 0.0f, 1.0f}, 1.0});
  }
  nn::SampleSource<float> src{{samples.size()}, [&](std::size_t, std::size_t i) { return samples[i]; }};
  auto net = nn::residual_normal_net<float>(3, cfg.net);
  net.init(1);
  nn::AdamState<float> opt(net);
  nn::TrainConfig tc;
  tc.epochs = 1000;
  tc.batch_size = 8;
  tc.target_loss = 1e-4;
  const auto rep = nn::train(net, opt, src, tc);
  EXPECT_LT(rep.final_loss(), 1e-4);
}

TEST_F(NormalData, FeatureBranchOverfitsSmallSet) {
  NormalConfig cfg;
  cfg.net.width = 6;
  const PatchMaps maps(cube_->noisy, cfg.patch_scale * cube_->r_average);
  const auto members = branch_members(*cube_, Branch::feature);
  ASSERT_GE(members.size(), 32u);
  std::vector<nn::Sample<float>> samples;
  for (std::size_t k = 0; k < 32; ++k) {
    const NormalSample s = normal_sample(maps, *cube_, members[k * members.size() / 32], Branch::feature, cfg);
    samples.push_back({to_input(s.map), std::vector<float>(s.label.begin(), s.label.end()), 1.0});
  }
  nn::SampleSource<float> src{{samples.size()}, [&](std::size_t, std::size_t i) { return samples[i]; }};
  auto net = nn::residual_normal_net<float>(6, cfg.net);
  net.init(2);
  nn::AdamState<float> opt(net);
  nn::TrainConfig tc;
  tc.epochs = 1000;
  tc.batch_size = 8;
  tc.target_loss = 1e-2;
  const auto rep = nn::train(net, opt, src, tc);
  EXPECT_LT(rep.final_loss(), 1e-2);
  EXPECT_LT(rep.final_loss(), rep.epoch_loss.front() * 0.05);
}

TEST_F(NormalData, PredictionsAreUnitNormals) {
  NormalConfig cfg;
  cfg.net.width = 4;
  const PatchMaps maps(cube_->noisy, cfg.patch_scale * cube_->r_average);
  NormalModels models{nn::residual_normal_net<float>(3, cfg.net), nn::residual_normal_net<float>(6, cfg.net)};
  models.non_feature.init(1);
  models.feature.init(2);
  ClassifiedCloud classes;
  classes.scores.assign(maps.size(), 0.0);
  classes.is_feature.assign(maps.size(), 0);
  for (std::size_t i = 0; i < maps.size(); i += 2) {
    classes.scores[i] = 0.9;
    classes.is_feature[i] = 1;
  }
  const auto pred = predict_normals(models, classes, maps, cube_->r_average, cfg);
  ASSERT_EQ(pred.normals.size(), maps.size());
  for (const auto& n : pred.normals) EXPECT_NEAR(n.norm(), 1.0, 1e-9);
}

TEST_F(NormalData, ZeroNetworkFallsBackToPca) {
  NormalConfig cfg;
  cfg.net.width = 4;
  const PatchMaps maps(cube_->noisy, cfg.patch_scale * cube_->r_average);
  NormalModels models{nn::residual_normal_net<float>(3, cfg.net), nn::residual_normal_net<float>(6, cfg.net)};
  ClassifiedCloud classes;
  classes.scores.assign(maps.size(), 0.0);
  classes.is_feature.assign(maps.size(), 0);
  const auto pred = predict_normals(models, classes, maps, cube_->r_average, cfg);
  EXPECT_EQ(pred.fallbacks, maps.size());
  for (std::size_t i = 0; i < maps.size(); i += 97)
    EXPECT_LT((pred.normals[i] - maps.at(i, cfg.map_size).second.mu3()).norm(), 1e-12);
}

TEST_F(NormalData, IsolatedPointsAreSkipped) {
  LabeledCloud lc = *cube_;
  lc.noisy.points.push_back(Vec3(5, 5, 5));
  lc.labels.push_back(lc.labels[branch_members(*cube_, Branch::non_feature).front()]);
  NormalConfig cfg;
  cfg.train.epochs = 1;
  cfg.train.per_epoch = 32;
  const auto usable = PatchMaps(lc.noisy, cfg.patch_scale * cube_->r_average).usable();
  ASSERT_EQ(usable.size(), cube_->noisy.size());
  EXPECT_EQ(usable.back(), cube_->noisy.size() - 1);
  EXPECT_NO_THROW(train_normal_net({&lc}, Branch::non_feature, cfg));
}

TEST_F(NormalData, EmptyBranchThrows) {
  LabeledCloud plain = *cube_;
  for (auto& l : plain.labels) l.feature = l.two_normals = false;
  NormalConfig cfg;
  cfg.train.epochs = 1;
  try {
    train_normal_net({&plain}, Branch::feature, cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty feature training set");
  }
}
