#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "fedgimp/autograd.hpp"
#include "fedgimp/tensor.hpp"

namespace fedgimp::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central-difference directional derivative of f at x along dir.
inline double directional_fd(const std::function<double(const Tensor&)>& f, const Tensor& x, const Tensor& dir,
                             double h = 1e-5) {
  Tensor plus = x, minus = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] += h * dir[i];
    minus[i] -= h * dir[i];
  }
  return (f(plus) - f(minus)) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace fedgimp::testing
