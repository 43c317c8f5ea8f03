// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic workload traces with a prescribed pruning rate.
//
// The layer threshold is placed halfway between two adjacent sorted scores so
// that the ideal pruning rate hits the target as closely as the score
// multiset allows. The "clustered" distribution plants a query direction:
// relevant keys align with it and irrelevant keys are pushed away by
// `separation`; larger separation makes pruned scores terminate after fewer
// bits, which `target_avg_pruned_bits` exploits through bisection.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "leopard/bitserial.hpp"
#include "leopard/error.hpp"
#include "leopard/fxp.hpp"
#include "leopard/trace.hpp"

namespace leopard {

enum class ScoreDistribution { kGaussian, kClustered };

inline std::string to_string(ScoreDistribution d) {
  return d == ScoreDistribution::kGaussian ? "gaussian" : "clustered";
}

inline ScoreDistribution parse_distribution(const std::string& s) {
  if (s == "gaussian") return ScoreDistribution::kGaussian;
  if (s == "clustered") return ScoreDistribution::kClustered;
  throw ParameterError("unknown score distribution '" + s + "' (expected gaussian or clustered)");
}

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t seq_len = 64;
  std::size_t valid_length = 0;  ///< 0 means seq_len
  std::size_t d = 64;
  std::size_t heads = 1;
  std::size_t layers = 1;
  double target_pruning_rate = 0.5;
  ScoreDistribution distribution = ScoreDistribution::kClustered;
  double separation = 1.0;  ///< clustered only; negative values pull irrelevant keys toward the query
  /// When set, `separation` is searched so that pruned scores average this
  /// many processed bits (sign included) at granularity `B`.
  std::optional<double> target_avg_pruned_bits;
  int B = 2;
  QuantSpec q_spec = QuantSpec::unit(12);
  QuantSpec k_spec = QuantSpec::unit(12);
  QuantSpec v_spec = QuantSpec::unit(16);

  void validate() const {
    if (seq_len == 0 || d == 0 || heads == 0 || layers == 0) {
      throw ParameterError("synthetic: seq_len, d, heads and layers must be positive");
    }
    if (valid_length > seq_len) throw ParameterError("synthetic: valid_length exceeds seq_len");
    if (!(target_pruning_rate >= 0.0 && target_pruning_rate <= 1.0)) {
      throw ParameterError("synthetic: target pruning rate must be in [0, 1]");
    }
    if (!std::isfinite(separation)) throw ParameterError("synthetic: separation must be finite");
    if (B < 1) throw ParameterError("synthetic: B must be positive");
    for (const QuantSpec* s : {&q_spec, &k_spec, &v_spec}) {
      if (s->total_bits > 16) throw ParameterError("synthetic: traces store at most 16-bit codes");
      s->validate();
    }
  }
};

namespace detail {

using TraceRng = boost::random::mt19937_64;

inline double gauss(TraceRng& rng) { return boost::random::normal_distribution<double>(0.0, 1.0)(rng); }

/// Per-tensor scale mapping the largest |x| onto the largest code.
inline double tensor_scale(const std::vector<double>& xs, const QuantSpec& spec) {
  double mx = 0.0;
  for (double x : xs) mx = std::max(mx, std::abs(x));
  const double top = static_cast<double>(spec.max_magnitude()) * spec.lsb();
  return mx > 0.0 ? mx / top : 1.0;
}

inline std::vector<std::int32_t> quantize_codes(const std::vector<double>& xs, const QuantSpec& spec, double scale) {
  std::vector<std::int32_t> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(static_cast<std::int32_t>(quantize(x, spec, scale).raw()));
  return out;
}

inline HeadTrace make_head(TraceRng& rng, const SyntheticSpec& sp, double separation) {
  const std::size_t s = sp.seq_len;
  const std::size_t d = sp.d;
  const std::size_t valid = sp.valid_length == 0 ? s : sp.valid_length;
  std::vector<double> q(s * d, 0.0), k(s * d, 0.0), v(s * d, 0.0);
  std::vector<double> u(d);
  double norm = 0.0;
  for (double& x : u) {
    x = gauss(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : u) x /= norm > 0.0 ? norm : 1.0;
  // Planted component strength; the dot of two planted vectors, after the
  // 1/sqrt(d) scaling, is about 4 score units against unit noise.
  const double amp = 2.0 * std::pow(static_cast<double>(d), 0.25);
  const double relevant_fraction = std::max(0.05, 1.0 - sp.target_pruning_rate);
  for (std::size_t i = 0; i < valid; ++i) {
    for (std::size_t c = 0; c < d; ++c) q[i * d + c] = gauss(rng);
    if (sp.distribution == ScoreDistribution::kClustered) {
      for (std::size_t c = 0; c < d; ++c) q[i * d + c] += amp * u[c];
    }
  }
  for (std::size_t j = 0; j < valid; ++j) {
    const bool relevant = boost::random::uniform_01<double>()(rng) < relevant_fraction;
    for (std::size_t c = 0; c < d; ++c) k[j * d + c] = gauss(rng);
    if (sp.distribution == ScoreDistribution::kClustered) {
      const double w = relevant ? amp : -separation * amp;
      for (std::size_t c = 0; c < d; ++c) k[j * d + c] += w * u[c];
    }
  }
  for (std::size_t j = 0; j < valid; ++j)
    for (std::size_t c = 0; c < d; ++c) v[j * d + c] = gauss(rng);

  HeadTrace h;
  h.seq_len = s;
  h.valid_length = valid;
  h.d = d;
  h.q_scale = tensor_scale(q, sp.q_spec);
  h.k_scale = tensor_scale(k, sp.k_spec);
  h.v_scale = tensor_scale(v, sp.v_spec);
  h.q = quantize_codes(q, sp.q_spec, h.q_scale);
  h.k = quantize_codes(k, sp.k_spec, h.k_scale);
  h.v = quantize_codes(v, sp.v_spec, h.v_scale);
  return h;
}

/// Scaled real scores of every valid (row, column) pair of one head.
inline void collect_scores(const WorkloadTrace& t, const HeadTrace& h, std::vector<double>& out) {
  const double unit = score_unit(t, h);
  for (std::size_t i = 0; i < h.valid_length; ++i) {
    const auto q = code_row(h.q, i, h.d, t.q_spec);
    for (std::size_t j = 0; j < h.valid_length; ++j) {
      const auto k = code_row(h.k, j, h.d, t.k_spec);
      out.push_back(static_cast<double>(exact_fxp_dot(q, k).raw) * unit);
    }
  }
}

/// Threshold pruning exactly `round(rate * n)` of `scores` when no ties sit
/// at the cut.
inline double quantile_threshold(std::vector<double> scores, double rate) {
  if (scores.empty()) return 0.0;
  std::sort(scores.begin(), scores.end());
  const auto n = scores.size();
  const auto cut = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  if (cut == 0) return scores.front() - 1.0;
  if (cut >= n) return scores.back() + 1.0;
  return 0.5 * (scores[cut - 1] + scores[cut]);
}

inline WorkloadTrace generate(const SyntheticSpec& sp, double separation) {
  TraceRng rng(sp.seed);
  WorkloadTrace t;
  t.model = "synthetic-" + to_string(sp.distribution);
  t.task = "target-rate-" + std::to_string(sp.target_pruning_rate);
  t.q_spec = sp.q_spec;
  t.k_spec = sp.k_spec;
  t.v_spec = sp.v_spec;
  for (std::size_t l = 0; l < sp.layers; ++l) {
    LayerTrace lt;
    std::vector<double> scores;
    for (std::size_t h = 0; h < sp.heads; ++h) {
      lt.heads.push_back(make_head(rng, sp, separation));
      collect_scores(t, lt.heads.back(), scores);
    }
    lt.threshold = quantile_threshold(std::move(scores), sp.target_pruning_rate);
    t.layers.push_back(std::move(lt));
  }
  return t;
}

}  // namespace detail

struct TraceStats {
  std::size_t valid_scores = 0;
  std::size_t pruned = 0;
  std::size_t pruned_bits = 0;  ///< bits processed on pruned scores
  std::size_t total_bits = 0;

  double pruning_rate() const noexcept {
    return valid_scores == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(valid_scores);
  }
  double avg_pruned_bits() const noexcept {
    return pruned == 0 ? 0.0 : static_cast<double>(pruned_bits) / static_cast<double>(pruned);
  }
};

/// Runs the bit-serial engine over every valid score of `t`.
inline TraceStats bit_serial_stats(const WorkloadTrace& t, const SerialConfig& cfg) {
  TraceStats st;
  for (const auto& l : t.layers) {
    for (const auto& h : l.heads) {
      const auto th = ScoreThreshold::from_real(l.threshold, score_unit(t, h));
      std::vector<BitPlaneMatrix> ks;
      for (std::size_t j = 0; j < h.valid_length; ++j) ks.push_back(to_bit_planes(code_row(h.k, j, h.d, t.k_spec)));
      for (std::size_t i = 0; i < h.valid_length; ++i) {
        const auto q = code_row(h.q, i, h.d, t.q_spec);
        for (const auto& k : ks) {
          const DotOutcome o = run_dot(q, k, th, cfg);
          ++st.valid_scores;
          st.total_bits += static_cast<std::size_t>(bits_of(o));
          if (is_pruned(o)) {
            ++st.pruned;
            st.pruned_bits += static_cast<std::size_t>(bits_of(o));
          }
        }
      }
    }
  }
  return st;
}

/// Fraction of valid scores strictly below the layer threshold.
inline double ideal_pruning_rate(const WorkloadTrace& t) {
  std::size_t total = 0;
  std::size_t pruned = 0;
  for (const auto& l : t.layers) {
    std::vector<double> scores;
    for (const auto& h : l.heads) detail::collect_scores(t, h, scores);
    total += scores.size();
    for (double s : scores) pruned += s < l.threshold ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

/// Deterministic synthetic trace. Throws ParameterError when the target rate
/// (within 0.01) or the target average bit count (within 0.05) cannot be
/// reached.
inline WorkloadTrace generate_synthetic(const SyntheticSpec& sp) {
  sp.validate();
  double sep = sp.separation;
  WorkloadTrace t;
  if (sp.target_avg_pruned_bits) {
    if (sp.distribution != ScoreDistribution::kClustered) {
      throw ParameterError("synthetic: an average-bits target needs the clustered distribution");
    }
    const SerialConfig cfg{sp.B, sp.k_spec.magnitude_bits(), sp.q_spec.total_bits};
    const double target = *sp.target_avg_pruned_bits;
    auto bits_at = [&](double s) { return bit_serial_stats(detail::generate(sp, s), cfg).avg_pruned_bits(); };
    // Average bits fall as the irrelevant keys move away.
    double lo = -1.0;
    double hi = 16.0;
    const double b_lo = bits_at(lo);
    const double b_hi = bits_at(hi);
    if (target > b_lo + 0.05 || target < b_hi - 0.05) {
      throw ParameterError("synthetic: average pruned bits " + std::to_string(target) + " outside reachable range [" +
                           std::to_string(b_hi) + ", " + std::to_string(b_lo) + "]");
    }
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (bits_at(mid) > target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double b0 = bits_at(lo);
    const double b1 = bits_at(hi);
    sep = std::abs(b0 - target) <= std::abs(b1 - target) ? lo : hi;
    t = detail::generate(sp, sep);
    const double got = bit_serial_stats(t, cfg).avg_pruned_bits();
    if (std::abs(got - target) > 0.05) {
      throw ParameterError("synthetic: average pruned bits " + std::to_string(target) + " not reachable (closest " +
                           std::to_string(got) + ")");
    }
  } else {
    t = detail::generate(sp, sep);
  }
  const double rate = ideal_pruning_rate(t);
  if (std::abs(rate - sp.target_pruning_rate) > 0.01) {
    throw ParameterError("synthetic: pruning rate " + std::to_string(sp.target_pruning_rate) +
                         " not reachable with this distribution (closest " + std::to_string(rate) + ")");
  }
  return t;
}

}  // namespace leopard
