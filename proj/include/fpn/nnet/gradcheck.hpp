#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fpn/nnet/network.hpp"
#include "fpn/rng.hpp"

namespace fpn::nn {

/// Loss callback: returns the loss of `out` and writes d(loss)/d(out).
using LossFn = std::function<double(std::span<const double> out, std::span<double> grad)>;

struct GradCheckResult {
  double max_param_error = 0.0;
  double max_input_error = 0.0;
  double worst() const { return std::max(max_param_error, max_input_error); }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
/// to round-off from producing meaningless ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares back-propagated gradients with central differences at `probes`
/// random parameters and `probes` random input entries.
inline GradCheckResult grad_check(Network<double>& net, std::span<const double> input,
                                  const LossFn& loss, std::uint64_t seed, int probes = 20,
                                  double h = 1e-5) {
  Workspace<double> ws;
  net.forward(input, ws);
  std::vector<double> g(ws.output().size());
  loss(ws.output(), g);
  auto grads = net.zeros_like();
  net.backward(ws, g, grads);
  const Buffer<double> input_grad = ws.input_grad;

  auto eval = [&](std::span<const double> x) {
    Workspace<double> w;
    net.forward(x, w);
    std::vector<double> scratch(w.output().size());
    return loss(w.output(), scratch);
  };

  GradCheckResult res;
  Rng rng(seed, "gradcheck");
  const std::size_t total = net.parameter_count();
  for (int k = 0; k < probes && total > 0; ++k) {
    std::size_t flat = rng.below(total), t = 0;
    while (flat >= net.params()[t].size()) flat -= net.params()[t++].size();
    double& p = net.params()[t][flat];
    const double saved = p;
    p = saved + h;
    const double lp = eval(input);
    p = saved - h;
    const double lm = eval(input);
    p = saved;
    res.max_param_error =
        std::max(res.max_param_error, relative_error(grads[t][flat], (lp - lm) / (2 * h)));
  }
  std::vector<double> x(input.begin(), input.end());
  for (int k = 0; k < probes && !x.empty(); ++k) {
    const std::size_t i = rng.below(x.size());
    const double saved = x[i];
    x[i] = saved + h;
    const double lp = eval(x);
    x[i] = saved - h;
    const double lm = eval(x);
    x[i] = saved;
    res.max_input_error =
        std::max(res.max_input_error, relative_error(input_grad[i], (lp - lm) / (2 * h)));
  }
  return res;
}

}  // namespace fpn::nn
