#pragma once

// Small feed-forward CNN engine: convolution, 2x2 max pooling, ReLU,
// fully-connected, residual blocks and global average pooling. One sample is
// processed at a time; batching happens in the trainer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fpn/common.hpp"
#include "fpn/rng.hpp"

namespace fpn::nn {

// Every buffer is aligned to Eigen's vector width. With arbitrary malloc
// alignment Eigen picks different reduction orders from run to run, which
// breaks bitwise reproducibility of training.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct Shape {
  int c = 1, h = 1, w = 1;
  int size() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

enum class LayerKind { conv, maxpool, relu, linear, residual, global_avg_pool };

/// Hyperparameters of one layer. Unused fields stay zero.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in = 0;      // input channels (conv, residual) or features (linear)
  int out = 0;     // output channels or features
  int kernel = 0;  // conv kernel size
  int pad = 0;     // conv zero padding

  static LayerSpec conv(int in, int out, int kernel, int pad = 0) {
    return {LayerKind::conv, in, out, kernel, pad};
  }
  static LayerSpec maxpool() { return {LayerKind::maxpool}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec linear(int in, int out) { return {LayerKind::linear, in, out}; }
  static LayerSpec residual(int channels) {
    return {LayerKind::residual, channels, channels, 3, 1};
  }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }
};

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

namespace detail {

/// Unfolds a CHW image into a (C*k*k) x (OH*OW) row-major matrix.
template <class T>
void im2col(const T* in, int C, int H, int W, int k, int pad, int OH, int OW, T* cols) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy + ky - pad;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox + kx - pad;
            row[oy * OW + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? in[(static_cast<std::size_t>(c) * H + iy) * W + ix]
                                    : T(0);
          }
        }
      }
}

/// Adjoint of im2col; accumulates into `out`.
template <class T>
void col2im(const T* cols, int C, int H, int W, int k, int pad, int OH, int OW, T* out) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox + kx - pad;
            if (ix < 0 || ix >= W) continue;
            out[(static_cast<std::size_t>(c) * H + iy) * W + ix] += row[oy * OW + ox];
          }
        }
      }
}

template <class T>
struct ConvGeom {
  int C, H, W, OC, k, pad, OH, OW;
  int K() const { return C * k * k; }
  int N() const { return OH * OW; }
};

template <class T>
void conv_forward(const ConvGeom<T>& g, const T* weight, const T* bias, const T* in,
                  Buffer<T>& cols, T* out) {
  cols.resize(static_cast<std::size_t>(g.K()) * g.N());
  im2col(in, g.C, g.H, g.W, g.k, g.pad, g.OH, g.OW, cols.data());
  Eigen::Map<const MatR<T>> w(weight, g.OC, g.K());
  Eigen::Map<const MatR<T>> x(cols.data(), g.K(), g.N());
  Eigen::Map<MatR<T>> y(out, g.OC, g.N());
  y.noalias() = w * x;
  y.colwise() += Eigen::Map<const VecX<T>>(bias, g.OC);
}

/// Accumulates weight/bias gradients; writes (not accumulates) the input
/// gradient when `gin` is non-null.
template <class T>
void conv_backward(const ConvGeom<T>& g, const T* weight, const Buffer<T>& cols,
                   const T* gout, T* gweight, T* gbias, T* gin, Buffer<T>& scratch) {
  Eigen::Map<const MatR<T>> w(weight, g.OC, g.K());
  Eigen::Map<const MatR<T>> x(cols.data(), g.K(), g.N());
  Eigen::Map<const MatR<T>> gy(gout, g.OC, g.N());
  Eigen::Map<MatR<T>>(gweight, g.OC, g.K()).noalias() += gy * x.transpose();
  Eigen::Map<VecX<T>>(gbias, g.OC) += gy.rowwise().sum();
  if (!gin) return;
  scratch.resize(static_cast<std::size_t>(g.K()) * g.N());
  Eigen::Map<MatR<T>> gx(scratch.data(), g.K(), g.N());
  gx.noalias() = w.transpose() * gy;
  std::fill(gin, gin + static_cast<std::size_t>(g.C) * g.H * g.W, T(0));
  col2im(scratch.data(), g.C, g.H, g.W, g.k, g.pad, g.OH, g.OW, gin);
}

}  // namespace detail

/// Per-sample activations and caches. One workspace per concurrent worker.
template <class T>
struct Workspace {
  std::vector<Buffer<T>> acts;                 // acts[0] input, acts[l+1] output of layer l
  std::vector<std::vector<Buffer<T>>> cache;   // layer-specific buffers
  std::vector<std::vector<std::uint32_t>> argmax;   // max-pool winners
  Buffer<T> grad_a, grad_b, scratch;
  Buffer<T> input_grad;
  bool has_forward = false;

  const Buffer<T>& output() const { return acts.back(); }
};

/// Parameter-shaped buffers (gradients, optimizer moments).
template <class T>
using ParamSet = std::vector<Buffer<T>>;

template <class T>
void zero(ParamSet<T>& p) {
  for (auto& t : p) std::fill(t.begin(), t.end(), T(0));
}

template <class T>
class Network {
 public:
  Network() = default;

  Network(Shape input, std::vector<LayerSpec> layers)
      : input_(input), layers_(std::move(layers)) {
    Shape s = input_;
    shapes_.push_back(s);
    for (const auto& l : layers_) {
      param_begin_.push_back(params_.size());
      switch (l.kind) {
        case LayerKind::conv: {
          if (l.in != s.c) throw Error("conv input channels do not match");
          const int oh = s.h + 2 * l.pad - l.kernel + 1, ow = s.w + 2 * l.pad - l.kernel + 1;
          if (oh < 1 || ow < 1) throw Error("conv kernel larger than input");
          params_.emplace_back(static_cast<std::size_t>(l.out) * l.in * l.kernel * l.kernel);
          params_.emplace_back(static_cast<std::size_t>(l.out));
          s = {l.out, oh, ow};
          break;
        }
        case LayerKind::maxpool:
          if (s.h < 2 || s.w < 2) throw Error("pooling input too small");
          s = {s.c, s.h / 2, s.w / 2};
          break;
        case LayerKind::relu:
          break;
        case LayerKind::linear:
          if (l.in != s.size()) throw Error("linear input size does not match");
          params_.emplace_back(static_cast<std::size_t>(l.out) * l.in);
          params_.emplace_back(static_cast<std::size_t>(l.out));
          s = {l.out, 1, 1};
          break;
        case LayerKind::residual:
          if (l.in != s.c) throw Error("residual channels do not match");
          for (int k = 0; k < 2; ++k) {
            params_.emplace_back(static_cast<std::size_t>(l.in) * l.in * 9);
            params_.emplace_back(static_cast<std::size_t>(l.in));
          }
          break;
        case LayerKind::global_avg_pool:
          s = {s.c, 1, 1};
          break;
      }
      shapes_.push_back(s);
    }
  }

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return shapes_.back(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<Shape>& shapes() const { return shapes_; }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) n += t.size();
    return n;
  }

  ParamSet<T> zeros_like() const {
    ParamSet<T> z;
    for (const auto& t : params_) z.emplace_back(t.size(), T(0));
    return z;
  }

  /// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)); zero biases.
  /// The second convolution of each residual block starts at a tenth of that
  /// so blocks begin close to the identity.
  void init(std::uint64_t seed) {
    Rng rng(seed, "init");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& spec = layers_[l];
      const std::size_t p = param_begin_[l];
      auto fill = [&](Buffer<T>& w, double fan_in, double gain) {
        const double bound = gain * std::sqrt(6.0 / fan_in);
        for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
      };
      switch (spec.kind) {
        case LayerKind::conv:
          fill(params_[p], spec.in * spec.kernel * spec.kernel, 1.0);
          std::fill(params_[p + 1].begin(), params_[p + 1].end(), T(0));
          break;
        case LayerKind::linear:
          fill(params_[p], spec.in, 1.0);
          std::fill(params_[p + 1].begin(), params_[p + 1].end(), T(0));
          break;
        case LayerKind::residual:
          fill(params_[p], spec.in * 9, 1.0);
          std::fill(params_[p + 1].begin(), params_[p + 1].end(), T(0));
          fill(params_[p + 2], spec.in * 9, 0.1);
          std::fill(params_[p + 3].begin(), params_[p + 3].end(), T(0));
          break;
        default:
          break;
      }
    }
  }

  void forward(std::span<const T> input, Workspace<T>& ws) const {
    if (static_cast<int>(input.size()) != input_.size())
      throw Error("input size " + std::to_string(input.size()) + " does not match network input " +
                  std::to_string(input_.size()));
    const std::size_t L = layers_.size();
    ws.acts.resize(L + 1);
    ws.cache.resize(L);
    ws.argmax.resize(L);
    ws.acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < L; ++l) {
      const Shape& si = shapes_[l];
      const Shape& so = shapes_[l + 1];
      const auto& x = ws.acts[l];
      auto& y = ws.acts[l + 1];
      y.resize(static_cast<std::size_t>(so.size()));
      const auto& spec = layers_[l];
      const std::size_t p = param_begin_[l];
      switch (spec.kind) {
        case LayerKind::conv: {
          ws.cache[l].resize(1);
          const detail::ConvGeom<T> g{si.c, si.h, si.w, so.c, spec.kernel, spec.pad, so.h, so.w};
          detail::conv_forward(g, params_[p].data(), params_[p + 1].data(), x.data(),
                               ws.cache[l][0], y.data());
          break;
        }
        case LayerKind::maxpool: {
          auto& am = ws.argmax[l];
          am.resize(y.size());
          for (int c = 0; c < so.c; ++c)
            for (int oy = 0; oy < so.h; ++oy)
              for (int ox = 0; ox < so.w; ++ox) {
                std::uint32_t best = static_cast<std::uint32_t>((c * si.h + 2 * oy) * si.w + 2 * ox);
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) {
                    const auto idx =
                        static_cast<std::uint32_t>((c * si.h + 2 * oy + dy) * si.w + 2 * ox + dx);
                    if (x[idx] > x[best]) best = idx;
                  }
                const std::size_t o = (static_cast<std::size_t>(c) * so.h + oy) * so.w + ox;
                am[o] = best;
                y[o] = x[best];
              }
          break;
        }
        case LayerKind::relu:
          for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
          break;
        case LayerKind::linear: {
          Eigen::Map<const MatR<T>> w(params_[p].data(), spec.out, spec.in);
          Eigen::Map<VecX<T>> out(y.data(), spec.out);
          out.noalias() = w * Eigen::Map<const VecX<T>>(x.data(), spec.in);
          out += Eigen::Map<const VecX<T>>(params_[p + 1].data(), spec.out);
          break;
        }
        case LayerKind::residual: {
          // cache: cols1, pre1 (conv1 output), act1 (relu), cols2, sum
          auto& c = ws.cache[l];
          c.resize(5);
          const detail::ConvGeom<T> g{si.c, si.h, si.w, si.c, 3, 1, si.h, si.w};
          const std::size_t n = x.size();
          c[1].resize(n);
          detail::conv_forward(g, params_[p].data(), params_[p + 1].data(), x.data(), c[0], c[1].data());
          c[2].resize(n);
          for (std::size_t i = 0; i < n; ++i) c[2][i] = c[1][i] > T(0) ? c[1][i] : T(0);
          c[4].resize(n);
          detail::conv_forward(g, params_[p + 2].data(), params_[p + 3].data(), c[2].data(), c[3],
                               c[4].data());
          for (std::size_t i = 0; i < n; ++i) {
            c[4][i] += x[i];
            y[i] = c[4][i] > T(0) ? c[4][i] : T(0);
          }
          break;
        }
        case LayerKind::global_avg_pool: {
          const int hw = si.h * si.w;
          for (int ch = 0; ch < si.c; ++ch) {
            T s = 0;
            for (int i = 0; i < hw; ++i) s += x[static_cast<std::size_t>(ch) * hw + i];
            y[ch] = s / static_cast<T>(hw);
          }
          break;
        }
      }
    }
    ws.has_forward = true;
  }

  /// Back-propagates `out_grad` through the cached forward pass, accumulating
  /// parameter gradients into `grads` and leaving d(loss)/d(input) in
  /// ws.input_grad.
  void backward(Workspace<T>& ws, std::span<const T> out_grad, ParamSet<T>& grads) const {
    if (!ws.has_forward) throw Error("backward called before forward");
    if (static_cast<int>(out_grad.size()) != output_shape().size())
      throw Error("output gradient size does not match network output");
    if (grads.size() != params_.size()) throw Error("gradient buffers do not match parameters");
    Buffer<T>& g = ws.grad_a;
    Buffer<T>& gprev = ws.grad_b;
    g.assign(out_grad.begin(), out_grad.end());
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const Shape& si = shapes_[li];
      const Shape& so = shapes_[li + 1];
      const auto& x = ws.acts[li];
      const auto& y = ws.acts[li + 1];
      const auto& spec = layers_[li];
      const std::size_t p = param_begin_[li];
      gprev.assign(static_cast<std::size_t>(si.size()), T(0));
      switch (spec.kind) {
        case LayerKind::conv: {
          const detail::ConvGeom<T> geo{si.c, si.h, si.w, so.c, spec.kernel, spec.pad, so.h, so.w};
          detail::conv_backward(geo, params_[p].data(), ws.cache[li][0], g.data(), grads[p].data(),
                                grads[p + 1].data(), gprev.data(), ws.scratch);
          break;
        }
        case LayerKind::maxpool:
          for (std::size_t o = 0; o < g.size(); ++o) gprev[ws.argmax[li][o]] += g[o];
          break;
        case LayerKind::relu:
          for (std::size_t i = 0; i < g.size(); ++i) gprev[i] = y[i] > T(0) ? g[i] : T(0);
          break;
        case LayerKind::linear: {
          Eigen::Map<const MatR<T>> w(params_[p].data(), spec.out, spec.in);
          Eigen::Map<const VecX<T>> gy(g.data(), spec.out);
          Eigen::Map<MatR<T>>(grads[p].data(), spec.out, spec.in).noalias() +=
              gy * Eigen::Map<const VecX<T>>(x.data(), spec.in).transpose();
          Eigen::Map<VecX<T>>(grads[p + 1].data(), spec.out) += gy;
          Eigen::Map<VecX<T>>(gprev.data(), spec.in).noalias() = w.transpose() * gy;
          break;
        }
        case LayerKind::residual: {
          auto& c = ws.cache[li];
          const detail::ConvGeom<T> geo{si.c, si.h, si.w, si.c, 3, 1, si.h, si.w};
          const std::size_t n = x.size();
          Buffer<T> gsum(n), gact(n);
          for (std::size_t i = 0; i < n; ++i) gsum[i] = c[4][i] > T(0) ? g[i] : T(0);
          detail::conv_backward(geo, params_[p + 2].data(), c[3], gsum.data(), grads[p + 2].data(),
                                grads[p + 3].data(), gact.data(), ws.scratch);
          for (std::size_t i = 0; i < n; ++i) gact[i] = c[1][i] > T(0) ? gact[i] : T(0);
          detail::conv_backward(geo, params_[p].data(), c[0], gact.data(), grads[p].data(),
                                grads[p + 1].data(), gprev.data(), ws.scratch);
          for (std::size_t i = 0; i < n; ++i) gprev[i] += gsum[i];
          break;
        }
        case LayerKind::global_avg_pool: {
          const int hw = si.h * si.w;
          for (int ch = 0; ch < si.c; ++ch)
            for (int i = 0; i < hw; ++i)
              gprev[static_cast<std::size_t>(ch) * hw + i] = g[ch] / static_cast<T>(hw);
          break;
        }
      }
      std::swap(g, gprev);
    }
    ws.input_grad = g;
  }

  std::vector<T> predict(std::span<const T> input) const {
    Workspace<T> ws;
    forward(input, ws);
    return std::vector<T>(ws.output().begin(), ws.output().end());
  }

  /// Line-based description of the topology; parse_topology inverts it.
  std::string topology() const {
    std::ostringstream os;
    os << "input " << input_.c << " " << input_.h << " " << input_.w << "\n";
    for (const auto& l : layers_) {
      switch (l.kind) {
        case LayerKind::conv:
          os << "conv " << l.in << " " << l.out << " " << l.kernel << " " << l.pad << "\n";
          break;
        case LayerKind::maxpool: os << "maxpool\n"; break;
        case LayerKind::relu: os << "relu\n"; break;
        case LayerKind::linear: os << "linear " << l.in << " " << l.out << "\n"; break;
        case LayerKind::residual: os << "residual " << l.in << "\n"; break;
        case LayerKind::global_avg_pool: os << "gap\n"; break;
      }
    }
    return os.str();
  }

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> param_begin_;
  ParamSet<T> params_;
};

/// Rebuilds a (zero-initialized) network from Network::topology() text.
template <class T>
Network<T> parse_topology(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  Shape input;
  bool have_input = false;
  std::vector<LayerSpec> layers;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    auto need = [&](int& v) {
      if (!(ls >> v)) throw ParseError("topology", lineno, "missing value for '" + kind + "'");
    };
    if (kind == "input") {
      need(input.c);
      need(input.h);
      need(input.w);
      have_input = true;
    } else if (kind == "conv") {
      LayerSpec s{LayerKind::conv};
      need(s.in);
      need(s.out);
      need(s.kernel);
      need(s.pad);
      layers.push_back(s);
    } else if (kind == "maxpool") {
      layers.push_back(LayerSpec::maxpool());
    } else if (kind == "relu") {
      layers.push_back(LayerSpec::relu());
    } else if (kind == "linear") {
      LayerSpec s{LayerKind::linear};
      need(s.in);
      need(s.out);
      layers.push_back(s);
    } else if (kind == "residual") {
      int c = 0;
      need(c);
      layers.push_back(LayerSpec::residual(c));
    } else if (kind == "gap") {
      layers.push_back(LayerSpec::global_avg_pool());
    } else {
      throw ParseError("topology", lineno, "unknown layer '" + kind + "'");
    }
  }
  if (!have_input) throw ParseError("topology", lineno, "missing input line");
  return Network<T>(input, std::move(layers));
}

}  // namespace fpn::nn
