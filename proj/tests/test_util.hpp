#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "layerlens/tensor.hpp"

namespace layerlens::testing {

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor({rows, cols}, random_values(rows * cols, rng, scale));
}

/// |a-b| relative to the larger magnitude, floored so values near zero are
/// compared absolutely.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace layerlens::testing
