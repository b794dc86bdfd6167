#pragma once

// Shared helpers for the unit tests: random tensor fills and small
// finite-difference / comparison utilities used as independent oracles.

#include <cmath>
#include <functional>
#include <span>

#include "pvmdnn/rng.hpp"
#include "pvmdnn/tensor.hpp"

namespace testutil {

inline void fill_random(pvmdnn::Rng& rng, std::span<double> v, double bound = 1.0) {
  for (double& x : v) x = rng.next_uniform(-bound, bound);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// L2 relative disagreement between two flat tensors.
inline double rel_l2(std::span<const double> a, std::span<const double> b) {
  double d2 = 0.0, r2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
    r2 += b[i] * b[i];
  }
  return std::sqrt(d2) / std::max(std::sqrt(r2), 1e-12);
}

// Central finite differences of a scalar function w.r.t. every entry of v.
inline std::vector<double> fd_grad(std::span<double> v, double eps,
                                   const std::function<double()>& f) {
  std::vector<double> g(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + eps;
    const double up = f();
    v[i] = saved - eps;
    const double down = f();
    v[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace testutil
