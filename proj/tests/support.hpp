#pragma once

// Shared test oracles. The finite-difference gradient is the independent
// reference every analytic gradient is checked against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gorqat/rng.hpp"
#include "gorqat/tensor.hpp"

namespace testsupport {

// Central differences of a scalar-valued function with respect to every
// element of x. The function is re-evaluated with x mutated in place.
inline std::vector<double> finite_diff(gorqat::Tensor& x, const std::function<double()>& f,
                                       double h = 1e-5) {
  std::vector<double> g(x.numel());
  auto vals = x.values_mut();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = f();
    vals[i] = orig - h;
    const double down = f();
    vals[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Relative error with an absolute floor so near-zero gradients do not
// amplify finite-difference noise.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(std::span<const double> a, const std::vector<double>& b,
                          double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

inline gorqat::Tensor random_tensor(gorqat::Rng& rng, gorqat::Shape shape, double lo, double hi,
                                    bool requires_grad = false) {
  std::vector<double> v(gorqat::detail::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return gorqat::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Random probability rows.
inline gorqat::Tensor random_rows_simplex(gorqat::Rng& rng, std::size_t rows, std::size_t cols,
                                          bool requires_grad = false) {
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      v[r * cols + c] = 0.05 + rng.uniform();
      total += v[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= total;
  }
  return gorqat::Tensor::from({rows, cols}, std::move(v), requires_grad);
}

}  // namespace testsupport
