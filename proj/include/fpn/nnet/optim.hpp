#pragma once

#include <cmath>
#include <cstdint>

#include "fpn/nnet/network.hpp"

namespace fpn::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay = 0.9;       // learning-rate factor ...
  int decay_every = 100;    // ... applied every this many epochs
  int batch_size = 32;
  int epochs = 100;
  std::size_t per_epoch = 2000;  // samples drawn per source model per epoch
  std::uint64_t seed = 1;
  double target_loss = 0.0;      // stop once the epoch mean loss falls below (0: never)

  void check() const {
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw Error("adam betas must lie in [0, 1)");
    if (batch_size < 1 || epochs < 0 || decay_every < 1) throw Error("invalid training schedule");
  }
};

inline double effective_learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.decay, epoch / cfg.decay_every);
}

template <class T>
struct AdamState {
  ParamSet<T> m, v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const Network<T>& net) : m(net.zeros_like()), v(net.zeros_like()) {}
};

/// One bias-corrected Adam update. Throws Divergence on a non-finite gradient
/// before touching any parameter.
template <class T>
void adam_step(Network<T>& net, AdamState<T>& st, const ParamSet<T>& grads,
               const TrainConfig& cfg, int epoch) {
  auto& params = net.params();
  if (grads.size() != params.size() || st.m.size() != params.size())
    throw Error("gradient buffers do not match parameters");
  for (const auto& g : grads)
    for (T x : g)
      if (!std::isfinite(static_cast<double>(x))) throw Divergence();
  ++st.step;
  const double lr = effective_learning_rate(cfg, epoch);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    auto& m = st.m[t];
    auto& v = st.v[t];
    const auto& g = grads[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      p[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + cfg.epsilon));
    }
  }
  for (const auto& p : params)
    for (T x : p)
      if (!std::isfinite(static_cast<double>(x))) throw Divergence();
}

}  // namespace fpn::nn
