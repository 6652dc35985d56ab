#pragma once

#include <span>

#include "fpn/common.hpp"

namespace fpn::nn {

/// weight * ||out - target||^2; writes d/d(out) = 2 weight (out - target).
template <class T>
double l2_loss(std::span<const T> out, std::span<const T> target, double weight,
               std::span<T> grad) {
  if (out.size() != target.size() || grad.size() != out.size())
    throw Error("loss operands have different sizes");
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = static_cast<double>(out[i]) - static_cast<double>(target[i]);
    sum += d * d;
    grad[i] = static_cast<T>(2.0 * weight * d);
  }
  return weight * sum;
}

}  // namespace fpn::nn
