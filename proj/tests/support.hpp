#pragma once

// Finite-difference helpers shared by the unit tests and the acceptance gate.

#include "qpctl/net.hpp"
#include "qpctl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace qpctl::testing {

/// Central differences of f over every parameter.
inline Eigen::VectorXd fd_gradient(NetParams params, const std::function<double(const NetParams&)>& f,
                                   double h = 1e-6) {
  Eigen::VectorXd g(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double keep = params.values()[i];
    params.values()[i] = keep + h;
    const double up = f(params);
    params.values()[i] = keep - h;
    const double down = f(params);
    params.values()[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline OutputJacobian fd_input_jacobian(const NetParams& params, const Vec2& x, double h = 1e-6) {
  OutputJacobian j;
  for (int k = 0; k < 2; ++k) {
    Vec2 e = Vec2::Zero();
    e[k] = h;
    const auto up = forward(params, x + e);
    const auto down = forward(params, x - e);
    j.col(k) << (up.p - down.p) / (2 * h), (up.V - down.V) / (2 * h);
  }
  return j;
}

template <class A, class B>
double relative_error(const A& exact, const B& approx) {
  const double scale = std::max({exact.norm(), approx.norm(), 1e-300});
  return (exact - approx).norm() / scale;
}

/// Initialised weights with non-zero biases, so every parameter matters.
inline NetParams random_params(std::uint64_t seed, const NetArchitecture& arch = {}) {
  NetParams p = init_params(arch, seed);
  CounterStream rng(seed, 99);
  for (int l = 0; l < p.layer_count(); ++l) {
    auto b = p.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.5, 0.5);
  }
  return p;
}

}  // namespace qpctl::testing
