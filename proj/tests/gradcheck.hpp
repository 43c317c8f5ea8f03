// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// High-precision reference evaluations and finite differences for checking
// the learner's closed-form gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "leopard/learner.hpp"

namespace leopard::testutil {

using Real = boost::multiprecision::cpp_bin_float_50;

inline Real ref_soft_threshold(const Real& x, const Real& th, const HyperParams& hp) {
  const Real t = boost::multiprecision::tanh(Real(hp.s) * (x - th));
  return x >= th ? Real(x * t) : Real(Real(hp.c) * t);
}

inline Real ref_sigmoid(const Real& z) { return 1 / (1 + boost::multiprecision::exp(-z)); }

inline Real ref_surrogate(const std::vector<Real>& scores, const HyperParams& hp) {
  Real acc = 0;
  for (const auto& v : scores) acc += ref_sigmoid(Real(hp.k) * (v + Real(hp.c) - Real(hp.alpha)));
  return acc;
}

inline Real ref_total_loss(const Real& task, const std::vector<std::vector<Real>>& layers, const HyperParams& hp) {
  Real reg = 0;
  for (const auto& l : layers) reg += ref_surrogate(l, hp);
  return task + Real(hp.lambda) * reg;
}

/// Fourth-order central difference of f at x with step h, in 50 digits.
inline double central_difference(const std::function<Real(const Real&)>& f, double x, double h) {
  const Real X(x);
  const Real H(h);
  const Real d = (f(X - 2 * H) - 8 * f(X - H) + 8 * f(X + H) - f(X + 2 * H)) / (12 * H);
  return d.convert_to<double>();
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale == 0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
  int checked = 0;   ///< points with |analytic| above the floor
  int failures = 0;
  double worst = 0.0;

  void add(double analytic, double numeric, double tol = 1e-5, double floor = 1e-8) {
    if (std::abs(analytic) <= floor) return;
    ++checked;
    const double e = relative_error(analytic, numeric);
    worst = std::max(worst, e);
    if (!(e < tol)) ++failures;
  }
};

inline HyperParams random_hyper(std::mt19937_64& rng) {
  HyperParams hp;
  hp.s = std::uniform_real_distribution<double>(1.0, 10.0)(rng);
  hp.c = std::uniform_real_distribution<double>(1.0, 1000.0)(rng);
  hp.k = std::uniform_real_distribution<double>(10.0, 100.0)(rng);
  hp.alpha = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  hp.lambda = std::uniform_real_distribution<double>(1e-4, 1.0)(rng);
  return hp;
}

/// Both partials of the soft threshold at `points` random (x, th, hp). The
/// step is 1e-4 * max(1, |x|); points whose stencil would straddle x = th are
/// redrawn.
inline GradCheckResult check_soft_threshold(std::mt19937_64& rng, int points) {
  GradCheckResult r;
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int n = 0; n < points;) {
    const HyperParams hp = random_hyper(rng);
    const double x = u(rng);
    const double th = u(rng);
    const double hx = 1e-4 * std::max(1.0, std::abs(x));
    const double ht = 1e-4 * std::max(1.0, std::abs(th));
    if (std::abs(x - th) <= 2.5 * std::max(hx, ht)) continue;
    const auto g = soft_threshold_grad(x, th, hp);
    const Real T(th);
    const Real X(x);
    r.add(g.d_dx, central_difference([&](const Real& v) { return ref_soft_threshold(v, T, hp); }, x, hx));
    r.add(g.d_dth, central_difference([&](const Real& v) { return ref_soft_threshold(X, v, hp); }, th, ht));
    ++n;
  }
  return r;
}

/// Points are drawn inside the sigmoid transition, where the gradient is not
/// negligible; the step is scaled by 1/k to resolve the sigmoid.
inline GradCheckResult check_surrogate(std::mt19937_64& rng, int points) {
  GradCheckResult r;
  std::uniform_real_distribution<double> off(-0.15, 0.15);
  std::uniform_int_distribution<int> len(1, 8);
  for (int n = 0; n < points; ++n) {
    const HyperParams hp = random_hyper(rng);
    std::vector<double> scores(static_cast<std::size_t>(len(rng)));
    for (double& v : scores) v = -hp.c + hp.alpha + off(rng);
    const auto g = surrogate_l0_grad(scores, hp);
    const std::size_t j = static_cast<std::size_t>(rng() % scores.size());
    std::vector<Real> rs(scores.begin(), scores.end());
    const double h = 1e-4 / hp.k;
    r.add(g[j], central_difference(
                    [&](const Real& v) {
                      auto c = rs;
                      c[j] = v;
                      return ref_surrogate(c, hp);
                    },
                    scores[j], h));
  }
  return r;
}

inline GradCheckResult check_total_loss(std::mt19937_64& rng, int points) {
  GradCheckResult r;
  std::uniform_real_distribution<double> off(-0.15, 0.15);
  std::uniform_real_distribution<double> task(0.0, 3.0);
  for (int n = 0; n < points; ++n) {
    const HyperParams hp = random_hyper(rng);
    std::vector<std::vector<double>> layers(1 + rng() % 3);
    for (auto& l : layers) {
      l.resize(1 + rng() % 6);
      for (double& v : l) v = -hp.c + hp.alpha + off(rng);
    }
    const auto g = total_loss_grad(layers, hp);
    const std::size_t li = static_cast<std::size_t>(rng() % layers.size());
    const std::size_t j = static_cast<std::size_t>(rng() % layers[li].size());
    std::vector<std::vector<Real>> rl;
    for (const auto& l : layers) rl.emplace_back(l.begin(), l.end());
    const double t0 = task(rng);
    r.add(g[li][j], central_difference(
                        [&](const Real& v) {
                          auto c = rl;
                          c[li][j] = v;
                          return ref_total_loss(Real(t0), c, hp);
                        },
                        layers[li][j], 1e-4 / hp.k));
    // The task-loss partial is 1.
    r.add(1.0, central_difference([&](const Real& v) { return ref_total_loss(v, rl, hp); }, t0,
                                  1e-4 * std::max(1.0, std::abs(t0))));
  }
  return r;
}

}  // namespace leopard::testutil
