#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "fpn/nnet/loss.hpp"
#include "fpn/nnet/optim.hpp"
#include "fpn/parallel.hpp"
#include "fpn/rng.hpp"

namespace fpn::nn {

template <class T>
struct Sample {
  std::vector<T> input;
  std::vector<T> target;
  double weight = 1.0;
};

/// Training data as a set of source models (point clouds), each holding
/// `sizes[model]` samples produced on demand.
template <class T>
struct SampleSource {
  std::vector<std::size_t> sizes;
  std::function<Sample<T>(std::size_t model, std::size_t index)> get;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
  int epochs_run = 0;
  double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

/// Draws min(per_epoch, size) distinct indices of every model for one epoch
/// and returns them in a shuffled order.
inline std::vector<std::pair<std::size_t, std::size_t>> epoch_selection(
    const std::vector<std::size_t>& sizes, std::size_t per_epoch, std::uint64_t seed, int epoch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::uint64_t epoch_seed = derive_seed(seed, "epoch", static_cast<std::uint64_t>(epoch));
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    const std::size_t n = sizes[m], take = std::min(per_epoch, n);
    if (take == n) {
      for (std::size_t i = 0; i < n; ++i) out.emplace_back(m, i);
      continue;
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(epoch_seed, "model", m);
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    for (std::size_t i = 0; i < take; ++i) out.emplace_back(m, idx[i]);
  }
  Rng order(epoch_seed, "order");
  order.shuffle(out.begin(), out.end());
  return out;
}

/// Mini-batch Adam training with weighted l2 loss. Each batch is split into a
/// fixed number of gradient groups that are reduced in order, so results do
/// not depend on the worker count. `on_epoch(epoch, mean_loss)` may return
/// true to stop early.
template <class T>
TrainReport train(Network<T>& net, AdamState<T>& opt, const SampleSource<T>& source,
                  const TrainConfig& cfg,
                  const std::function<bool(int, double)>& on_epoch = {}) {
  cfg.check();
  if (opt.m.empty()) opt = AdamState<T>(net);
  constexpr int kGroups = 8;
  std::vector<ParamSet<T>> group_grads(kGroups, net.zeros_like());
  std::vector<Workspace<T>> workspaces(kGroups);
  std::array<double, kGroups> group_loss{};
  ParamSet<T> grads = net.zeros_like();
  TrainReport report;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto sel = epoch_selection(source.sizes, cfg.per_epoch, cfg.seed, epoch);
    if (sel.empty()) throw Error("empty training set");
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < sel.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(sel.size(), b0 + cfg.batch_size);
      parallel_for(kGroups, [&](std::size_t g) {
        zero(group_grads[g]);
        group_loss[g] = 0.0;
        Buffer<T> grad_out;
        for (std::size_t s = b0 + g; s < b1; s += kGroups) {
          const Sample<T> smp = source.get(sel[s].first, sel[s].second);
          net.forward(smp.input, workspaces[g]);
          const auto& out = workspaces[g].output();
          grad_out.resize(out.size());
          group_loss[g] += l2_loss<T>(out, smp.target, smp.weight, grad_out);
          net.backward(workspaces[g], grad_out, group_grads[g]);
        }
      });
      const T inv = T(1) / static_cast<T>(b1 - b0);
      for (std::size_t t = 0; t < grads.size(); ++t)
        for (std::size_t i = 0; i < grads[t].size(); ++i) {
          T s = 0;
          for (int g = 0; g < kGroups; ++g) s += group_grads[g][t][i];
          grads[t][i] = s * inv;
        }
      for (int g = 0; g < kGroups; ++g) epoch_loss += group_loss[g];
      adam_step(net, opt, grads, cfg, epoch);
    }
    epoch_loss /= static_cast<double>(sel.size());
    report.epoch_loss.push_back(epoch_loss);
    report.epochs_run = epoch + 1;
    bool stop = cfg.target_loss > 0.0 && epoch_loss < cfg.target_loss;
    if (on_epoch && on_epoch(epoch, epoch_loss)) stop = true;
    if (stop) break;
  }
  return report;
}

/// Mean weighted loss of a network over explicit samples (no training).
template <class T>
double evaluate_loss(const Network<T>& net, const std::vector<Sample<T>>& samples) {
  if (samples.empty()) return 0.0;
  Workspace<T> ws;
  Buffer<T> g;
  double sum = 0.0;
  for (const auto& s : samples) {
    net.forward(s.input, ws);
    g.resize(ws.output().size());
    sum += l2_loss<T>(ws.output(), s.target, s.weight, g);
  }
  return sum / static_cast<double>(samples.size());
}

}  // namespace fpn::nn
