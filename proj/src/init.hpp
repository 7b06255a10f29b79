#pragma once

#include <cmath>

#include "limcal/matrix.hpp"
#include "limcal/rng.hpp"

namespace limcal::init {

inline Matrix normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal() * stddev;
  return m;
}

// Uniform on +-sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.values()) v = rng.uniform(-limit, limit);
  return m;
}

}  // namespace limcal::init
