#pragma once

#include <cmath>
#include <random>

#include "capgen/tensor.hpp"

namespace capgen {

/// Glorot/Xavier uniform fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor<float> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937& rng) {
  Tensor<float> t(std::move(shape));
  const float a = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-a, a);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor<float> normal_fill(Shape shape, float stddev, std::mt19937& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace capgen
