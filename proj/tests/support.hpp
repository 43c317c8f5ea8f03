// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures and reference implementations for the test suites.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "leopard/bitserial.hpp"
#include "leopard/fxp.hpp"
#include "leopard/matrix.hpp"
#include "leopard/synthetic.hpp"
#include "leopard/trace.hpp"

namespace leopard::testutil {

/// Four-element worked example: q = (9, 5, 7, 2) as 5-bit integers and
/// k = (+.001, +.111, -.100, -.010) with three fractional magnitude bits.
struct WorkedExample {
  std::vector<FixedPointValue> q;
  std::vector<FixedPointValue> k;
  BitPlaneMatrix planes;
};

inline WorkedExample worked_example() {
  const QuantSpec qs{5, 0};
  const QuantSpec ks{4, 3};
  WorkedExample ex;
  for (int v : {9, 5, 7, 2}) ex.q.push_back(FixedPointValue::from_raw(v, qs));
  for (int v : {1, 7, -4, -2}) ex.k.push_back(FixedPointValue::from_raw(v, ks));
  ex.planes = to_bit_planes(ex.k);
  return ex;
}

inline std::vector<FixedPointValue> random_vector(std::mt19937_64& rng, std::size_t n, QuantSpec spec) {
  std::uniform_int_distribution<std::int64_t> code(-spec.max_magnitude(), spec.max_magnitude());
  std::vector<FixedPointValue> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(FixedPointValue::from_raw(code(rng), spec));
  return out;
}

/// Straight loops in long double: scaled scores, strict pruning below th,
/// softmax over survivors, rows with no survivor copy their own V row, padded
/// rows stay zero.
inline Matrix reference_pruned_attention(const Matrix& q, const Matrix& k, const Matrix& v, double th,
                                         std::size_t valid) {
  const std::size_t s = q.rows();
  const std::size_t d = q.cols();
  Matrix out(s, v.cols());
  const long double inv = 1.0L / std::sqrt(static_cast<long double>(d));
  for (std::size_t i = 0; i < valid; ++i) {
    std::vector<long double> sc(valid);
    std::vector<bool> keep(valid);
    long double mx = -std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < valid; ++j) {
      long double acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<long double>(q(i, c)) * k(j, c);
      sc[j] = acc * inv;
      keep[j] = !(static_cast<double>(sc[j]) < th);
      if (keep[j] && sc[j] > mx) mx = sc[j];
    }
    if (mx == -std::numeric_limits<long double>::infinity()) {
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) = v(i, c);
      continue;
    }
    long double z = 0;
    std::vector<long double> w(valid, 0);
    for (std::size_t j = 0; j < valid; ++j) {
      if (keep[j]) z += w[j] = std::exp(sc[j] - mx);
    }
    for (std::size_t c = 0; c < v.cols(); ++c) {
      long double acc = 0;
      for (std::size_t j = 0; j < valid; ++j) acc += w[j] * v(j, c);
      out(i, c) = static_cast<double>(acc / z);
    }
  }
  return out;
}

/// Small single-head trace with an explicit threshold.
inline WorkloadTrace small_trace(std::uint64_t seed, std::size_t s, std::size_t d, double rate,
                                 ScoreDistribution dist = ScoreDistribution::kGaussian) {
  SyntheticSpec sp;
  sp.seed = seed;
  sp.seq_len = s;
  sp.d = d;
  sp.target_pruning_rate = rate;
  sp.distribution = dist;
  return generate_synthetic(sp);
}

}  // namespace leopard::testutil
