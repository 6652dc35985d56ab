#pragma once

#include "fpn/nnet/network.hpp"

namespace fpn::nn {

/// LeNet-style classifier on a 32x32 map: three 5x5 convolutions, two
/// poolings, two fully-connected layers, 2 outputs.
template <class T>
Network<T> lenet_classifier(int input = 32) {
  const int s1 = (input - 4) / 2, s2 = (s1 - 4) / 2, s3 = s2 - 4;
  if (s3 < 1) throw Error("classifier input too small");
  return Network<T>({1, input, input},
                    {LayerSpec::conv(1, 6, 5), LayerSpec::relu(), LayerSpec::maxpool(),
                     LayerSpec::conv(6, 16, 5), LayerSpec::relu(), LayerSpec::maxpool(),
                     LayerSpec::conv(16, 120, 5), LayerSpec::relu(),
                     LayerSpec::linear(120 * s3 * s3, 84), LayerSpec::relu(),
                     LayerSpec::linear(84, 2)});
}

enum class NormalHead { flatten, global_avg_pool };

struct NormalNetConfig {
  int input = 48;
  int width = 8;        // channels of the stem and every residual block
  int blocks = 4;       // residual blocks; the first blocks-1 are each followed by pooling
  int hidden = 64;      // fully-connected hidden units
  NormalHead head = NormalHead::flatten;
};

/// Residual regression network: 3x3 stem, pooling, then residual blocks with
/// pooling between them, and a fully-connected head with `outputs` values.
template <class T>
Network<T> residual_normal_net(int outputs, const NormalNetConfig& c = {}) {
  std::vector<LayerSpec> layers = {LayerSpec::conv(1, c.width, 3, 1), LayerSpec::relu(),
                                   LayerSpec::maxpool()};
  int side = c.input / 2;
  for (int b = 0; b < c.blocks; ++b) {
    layers.push_back(LayerSpec::residual(c.width));
    if (b + 2 < c.blocks) {
      layers.push_back(LayerSpec::maxpool());
      side /= 2;
    }
  }
  if (side < 1) throw Error("normal net input too small for its depth");
  int features = c.width * side * side;
  if (c.head == NormalHead::global_avg_pool) {
    layers.push_back(LayerSpec::global_avg_pool());
    features = c.width;
  }
  layers.push_back(LayerSpec::linear(features, c.hidden));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::linear(c.hidden, outputs));
  return Network<T>({1, c.input, c.input}, std::move(layers));
}

}  // namespace fpn::nn
