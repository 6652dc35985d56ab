#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fpn/nnet/architectures.hpp"
#include "fpn/nnet/checkpoint.hpp"
#include "fpn/nnet/gradcheck.hpp"
#include "fpn/nnet/train.hpp"

using namespace fpn;
using namespace fpn::nn;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

void randomize(Network<double>& net, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& t : net.params())
    for (auto& x : t) x = rng.uniform(-scale, scale);
}

LossFn l2_against(std::vector<double> target, double weight = 1.0) {
  return [target, weight](std::span<const double> out, std::span<double> grad) {
    return l2_loss<double>(out, target, weight, grad);
  };
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroOutput) {
  Network<double> net({1, 1, 5}, {LayerSpec::linear(5, 4), LayerSpec::relu(), LayerSpec::linear(4, 3)});
  const auto out = net.predict(random_vector(5, 1));
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(Forward, LinearIsMatrixProduct) {
  Network<double> net({1, 1, 4}, {LayerSpec::linear(4, 3)});
  randomize(net, 2);
  const auto x = random_vector(4, 3);
  const auto y = net.predict(x);
  const auto& W = net.params()[0];
  const auto& b = net.params()[1];
  for (int o = 0; o < 3; ++o) {
    double s = b[o];
    for (int i = 0; i < 4; ++i) s += W[o * 4 + i] * x[i];
    EXPECT_NEAR(y[o], s, 1e-15);
  }
}

TEST(Forward, ConvMatchesDirectDotProducts) {
  for (int pad : {0, 1}) {
    Network<double> net({2, 5, 5}, {LayerSpec::conv(2, 3, 3, pad)});
    randomize(net, 4);
    const auto x = random_vector(50, 5);
    const auto y = net.predict(x);
    const int O = 5 + 2 * pad - 2;
    ASSERT_EQ(y.size(), static_cast<std::size_t>(3 * O * O));
    const auto& W = net.params()[0];
    const auto& b = net.params()[1];
    for (int oc = 0; oc < 3; ++oc)
      for (int oy = 0; oy < O; ++oy)
        for (int ox = 0; ox < O; ++ox) {
          double s = b[oc];
          for (int c = 0; c < 2; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy + ky - pad, ix = ox + kx - pad;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                s += W[((oc * 2 + c) * 3 + ky) * 3 + kx] * x[(c * 5 + iy) * 5 + ix];
              }
          EXPECT_NEAR(y[(oc * O + oy) * O + ox], s, 1e-14);
        }
  }
}

TEST(Forward, MaxPoolAndGlobalAverage) {
  Network<double> net({1, 4, 4}, {LayerSpec::maxpool()});
  std::vector<double> x(16);
  for (int i = 0; i < 16; ++i) x[i] = i;
  EXPECT_EQ(net.predict(x), (std::vector<double>{5, 7, 13, 15}));
  Network<double> gap({2, 2, 2}, {LayerSpec::global_avg_pool()});
  EXPECT_EQ(gap.predict(std::vector<double>{1, 2, 3, 4, 0, 0, 0, 8}), (std::vector<double>{2.5, 2}));
}

TEST(Forward, ShapeMismatchThrows) {
  Network<double> net({1, 1, 4}, {LayerSpec::linear(4, 2)});
  EXPECT_THROW(net.predict(std::vector<double>(5)), Error);
  EXPECT_THROW(Network<double>({1, 1, 4}, {LayerSpec::linear(5, 2)}), Error);
  EXPECT_THROW(Network<double>({2, 8, 8}, {LayerSpec::conv(1, 2, 3)}), Error);
}

TEST(Forward, DoesNotMutateParameters) {
  auto net = lenet_classifier<double>();
  net.init(3);
  const auto before = net.params();
  net.predict(random_vector(1024, 1));
  EXPECT_EQ(net.params(), before);
}

TEST(Backward, BeforeForwardThrows) {
  Network<double> net({1, 1, 2}, {LayerSpec::linear(2, 1)});
  Workspace<double> ws;
  auto g = net.zeros_like();
  EXPECT_THROW(net.backward(ws, std::vector<double>{1.0}, g), Error);
}

TEST(Backward, ZeroLossGradientGivesZeroGradients) {
  auto net = residual_normal_net<double>(3, {16, 4, 2, 8});
  net.init(1);
  Workspace<double> ws;
  net.forward(random_vector(256, 2), ws);
  auto g = net.zeros_like();
  net.backward(ws, std::vector<double>(3, 0.0), g);
  for (const auto& t : g)
    for (double v : t) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LeastSquaresClosedForm) {
  // Linear model without hidden layers: gradient of the mean squared error is
  // 2 X^T (X w - y) / n.
  const int n = 6, d = 3;
  const auto X = random_vector(n * d, 10);
  const auto y = random_vector(n, 11);
  Network<double> net({1, 1, d}, {LayerSpec::linear(d, 1)});
  randomize(net, 12);
  auto grads = net.zeros_like();
  Workspace<double> ws;
  for (int i = 0; i < n; ++i) {
    net.forward(std::span<const double>(X.data() + i * d, d), ws);
    std::vector<double> g(1);
    l2_loss<double>(ws.output(), std::vector<double>{y[i]}, 1.0 / n, g);
    net.backward(ws, g, grads);
  }
  const auto& w = net.params()[0];
  const double b = net.params()[1][0];
  for (int j = 0; j < d; ++j) {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      double r = b - y[i];
      for (int k = 0; k < d; ++k) r += X[i * d + k] * w[k];
      s += 2 * X[i * d + j] * r / n;
    }
    EXPECT_NEAR(grads[0][j], s, 1e-14);
  }
}

struct LayerCase {
  const char* name;
  Shape input;
  std::vector<LayerSpec> layers;
};

class GradCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradCheck, EveryLayerTypeMatchesFiniteDifferences) {
  const std::vector<LayerCase> cases = {
      {"linear", {1, 1, 7}, {LayerSpec::linear(7, 5)}},
      {"conv", {2, 6, 6}, {LayerSpec::conv(2, 3, 3)}},
      {"conv_pad", {2, 5, 5}, {LayerSpec::conv(2, 2, 3, 1)}},
      {"conv_5x5", {1, 9, 9}, {LayerSpec::conv(1, 2, 5)}},
      {"relu", {1, 1, 6}, {LayerSpec::linear(6, 6), LayerSpec::relu()}},
      {"maxpool", {2, 6, 6}, {LayerSpec::conv(2, 2, 3, 1), LayerSpec::maxpool()}},
      {"residual", {3, 6, 6}, {LayerSpec::residual(3)}},
      {"gap", {2, 4, 4}, {LayerSpec::conv(2, 3, 3, 1), LayerSpec::global_avg_pool()}},
      {"lenet", {1, 32, 32}, lenet_classifier<double>().layers()},
      {"residual_net", {1, 16, 16}, residual_normal_net<double>(6, {16, 4, 3, 8}).layers()},
  };
  const auto& c = cases[GetParam()];
  Network<double> net(c.input, c.layers);
  net.init(GetParam() + 1);
  // Shift biases away from zero so no unit sits exactly at a kink.
  Rng rng(GetParam(), "bias");
  for (auto& t : net.params())
    if (t.size() <= 120)
      for (auto& x : t) x += rng.uniform(-0.1, 0.1);
  const auto x = random_vector(c.input.size(), 100 + GetParam());
  const auto target = random_vector(net.output_shape().size(), 200 + GetParam());
  for (double weight : {1.0, 2.3}) {
    const auto res = grad_check(net, x, l2_against(target, weight), 7, 20, 1e-5);
    EXPECT_LT(res.max_param_error, 1e-4) << c.name;
    EXPECT_LT(res.max_input_error, 1e-4) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Layers, GradCheck, ::testing::Range(0, 10));

TEST(Loss, WeightedL2Examples) {
  std::vector<double> g(2);
  EXPECT_EQ(l2_loss<double>(std::vector<double>{1, 0}, std::vector<double>{1, 0}, 2.0, g), 0.0);
  EXPECT_EQ(l2_loss<double>(std::vector<double>{0, 0}, std::vector<double>{1, 0}, 1.0, g), 1.0);
  EXPECT_EQ(g, (std::vector<double>{-2, 0}));
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto out = random_vector(6, 30 + t), tgt = random_vector(6, 60 + t);
    const double w = rng.uniform(0.5, 3.0);
    std::vector<double> g(6), scratch(6);
    l2_loss<double>(out, tgt, w, g);
    for (int i = 0; i < 6; ++i) {
      auto p = out, m = out;
      p[i] += 1e-5;
      m[i] -= 1e-5;
      const double num = (l2_loss<double>(p, tgt, w, scratch) - l2_loss<double>(m, tgt, w, scratch)) / 2e-5;
      EXPECT_LT(relative_error(g[i], num), 1e-4);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Network<double> net({1, 1, 3}, {LayerSpec::linear(3, 2)});
  randomize(net, 1);
  const auto before = net.params();
  AdamState<double> st(net);
  adam_step(net, st, net.zeros_like(), TrainConfig{}, 0);
  EXPECT_EQ(net.params(), before);
}

TEST(Adam, ScalarQuadraticDecreasesMonotonically) {
  Network<double> net({1, 1, 1}, {LayerSpec::linear(1, 1)});
  net.params()[0][0] = 1.0;  // f(w) = w^2, gradient supplied directly
  AdamState<double> st(net);
  TrainConfig cfg;
  double prev = 1.0;
  for (int k = 0; k < 50; ++k) {
    auto g = net.zeros_like();
    g[0][0] = 2.0 * net.params()[0][0];
    adam_step(net, st, g, cfg, 0);
    const double w = std::abs(net.params()[0][0]);
    EXPECT_LT(w, prev);
    prev = w;
  }
}

TEST(Adam, LearningRateSchedule) {
  TrainConfig cfg;
  EXPECT_EQ(effective_learning_rate(cfg, 0), 1e-3);
  EXPECT_EQ(effective_learning_rate(cfg, 99), 1e-3);
  EXPECT_DOUBLE_EQ(effective_learning_rate(cfg, 100), 9e-4);
  EXPECT_DOUBLE_EQ(effective_learning_rate(cfg, 250), 1e-3 * 0.81);
  // The first Adam step moves a parameter by the learning rate (up to epsilon).
  Network<double> net({1, 1, 1}, {LayerSpec::linear(1, 1)});
  AdamState<double> st(net);
  auto g = net.zeros_like();
  g[0][0] = 3.0;
  adam_step(net, st, g, cfg, 100);
  EXPECT_NEAR(net.params()[0][0], -9e-4, 1e-11);
}

TEST(Adam, NonFiniteGradientIsDivergence) {
  Network<double> net({1, 1, 1}, {LayerSpec::linear(1, 1)});
  AdamState<double> st(net);
  auto g = net.zeros_like();
  g[1][0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(net, st, g, TrainConfig{}, 0);
    FAIL();
  } catch (const Divergence& e) {
    EXPECT_STREQ(e.what(), "divergence");
  }
  EXPECT_EQ(net.params()[1][0], 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto net = residual_normal_net<float>(6);
  net.init(5);
  AdamState<float> opt(net);
  Rng rng(2);
  for (auto& t : opt.m)
    for (auto& x : t) x = static_cast<float>(rng.normal());
  for (auto& t : opt.v)
    for (auto& x : t) x = static_cast<float>(rng.uniform());
  opt.step = 1234;
  std::stringstream ss;
  save_checkpoint(ss, net, opt);
  Network<float> back;
  AdamState<float> opt_back;
  load_checkpoint(ss, back, opt_back);
  EXPECT_EQ(back.topology(), net.topology());
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(opt_back.m, opt.m);
  EXPECT_EQ(opt_back.v, opt.v);
  EXPECT_EQ(opt_back.step, 1234u);
  std::stringstream again;
  save_checkpoint(again, back, opt_back);
  EXPECT_EQ(again.str(), ss.str());
}

TEST(Checkpoint, RejectsWrongScalarAndGarbage) {
  auto net = lenet_classifier<float>();
  std::stringstream ss;
  save_checkpoint(ss, net, AdamState<float>(net));
  Network<double> d;
  AdamState<double> od;
  EXPECT_THROW(load_checkpoint(ss, d, od), Error);
  std::stringstream junk("not a model");
  Network<float> f;
  AdamState<float> of;
  EXPECT_THROW(load_checkpoint(junk, f, of), Error);
}

TEST(Topology, ParseInvertsPrint) {
  const auto net = residual_normal_net<double>(3, {48, 8, 4, 64, NormalHead::global_avg_pool});
  EXPECT_EQ(parse_topology<double>(net.topology()).topology(), net.topology());
  EXPECT_THROW(parse_topology<double>("input 1 2 2\nbogus 3\n"), ParseError);
}

namespace {

SampleSource<double> toy_regression(std::size_t n, std::uint64_t seed) {
  SampleSource<double> src;
  src.sizes = {n};
  src.get = [seed](std::size_t, std::size_t i) {
    Sample<double> s;
    s.input = random_vector(8, seed * 1000 + i);
    s.target = {s.input[0] - s.input[3], 0.5 * s.input[5]};
    return s;
  };
  return src;
}

}  // namespace

TEST(Train, FrozenBatchLossNonIncreasingEarly) {
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Network<double> net({1, 1, 8}, {LayerSpec::linear(8, 16), LayerSpec::relu(), LayerSpec::linear(16, 2)});
    net.init(seed);
    AdamState<double> opt(net);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.epochs = 10;
    cfg.seed = seed;
    const auto report = train(net, opt, toy_regression(32, seed), cfg);
    bool ok = true;
    for (std::size_t k = 1; k < report.epoch_loss.size(); ++k)
      ok = ok && report.epoch_loss[k] <= report.epoch_loss[k - 1];
    passed += ok;
  }
  EXPECT_GE(passed, 4);
}

TEST(Train, DeterministicAcrossThreadCounts) {
  auto run = [](int threads) {
    set_worker_threads(threads);
    auto net = residual_normal_net<float>(3, {16, 4, 2, 8});
    net.init(3);
    AdamState<float> opt(net);
    SampleSource<float> src;
    src.sizes = {40, 25};
    src.get = [](std::size_t m, std::size_t i) {
      Sample<float> s;
      Rng rng(m * 100 + i);
      for (int k = 0; k < 256; ++k) s.input.push_back(static_cast<float>(rng.uniform(-1, 1)));
      s.target = {s.input[0], s.input[17], 1.0f};
      return s;
    };
    TrainConfig cfg;
    cfg.batch_size = 10;
    cfg.epochs = 3;
    cfg.per_epoch = 20;
    train(net, opt, src, cfg);
    set_worker_threads(1);
    return net.params();
  };
  const auto a = run(1), b = run(3), c = run(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Train, EpochSelectionWithoutReplacement) {
  const auto sel = epoch_selection({10, 3}, 5, 42, 0);
  std::set<std::pair<std::size_t, std::size_t>> uniq(sel.begin(), sel.end());
  EXPECT_EQ(sel.size(), 8u);
  EXPECT_EQ(uniq.size(), 8u);
  EXPECT_NE(epoch_selection({10, 3}, 5, 42, 1), sel);
}

TEST(Train, TargetLossStopsEarly) {
  Network<double> net({1, 1, 8}, {LayerSpec::linear(8, 2)});
  AdamState<double> opt(net);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 5000;
  cfg.target_loss = 1e-3;
  cfg.batch_size = 16;
  const auto report = train(net, opt, toy_regression(16, 1), cfg);
  EXPECT_LT(report.epochs_run, 5000);
  EXPECT_LT(report.final_loss(), 1e-3);
}
