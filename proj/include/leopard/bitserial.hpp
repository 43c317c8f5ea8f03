// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Bit-serial dot product with early termination.
//
// Q stays at full precision while K is consumed B magnitude planes per cycle,
// MSB first. After the sign cycle the engine keeps
//
//   P  partial sum of the planes processed so far
//   S  sum of |q_i| over pairs whose signs agree
//   M  S * (weight of every plane not processed yet)
//
// Only concordant pairs can still raise the score, so P + M bounds the final
// score from above. Once P + M < th the score is guaranteed to be pruned and
// the remaining cycles are skipped. All arithmetic is integer, in units of one
// LSB of the product (2^-(q.frac_bits + k.frac_bits)).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "leopard/error.hpp"
#include "leopard/fxp.hpp"

namespace leopard {

/// Threshold pre-scaled into the integer score domain. Comparisons are exact:
/// `prunes(v)` is true iff v * unit < th for the real threshold th.
class ScoreThreshold {
 public:
  enum class Kind { kNegInf, kFinite, kPosInf };

  static constexpr ScoreThreshold neg_inf() { return ScoreThreshold(Kind::kNegInf, 0); }
  static constexpr ScoreThreshold pos_inf() { return ScoreThreshold(Kind::kPosInf, 0); }
  /// Prunes every integer score strictly below `raw`.
  static constexpr ScoreThreshold raw(std::int64_t raw) { return ScoreThreshold(Kind::kFinite, raw); }

  /// `unit` is the real value of one integer score step.
  static ScoreThreshold from_real(double th, double unit) {
    if (!(unit > 0.0)) throw ConfigError("ScoreThreshold: unit must be positive");
    if (std::isnan(th)) throw ConfigError("ScoreThreshold: NaN threshold");
    const double r = std::ceil(th / unit);
    constexpr double kLimit = 4.0e18;
    if (r <= -kLimit) return neg_inf();
    if (r >= kLimit) return pos_inf();
    return raw(static_cast<std::int64_t>(r));
  }

  Kind kind() const noexcept { return kind_; }
  std::int64_t raw_value() const noexcept { return raw_; }

  bool prunes(std::int64_t v) const noexcept {
    switch (kind_) {
      case Kind::kNegInf: return false;
      case Kind::kPosInf: return true;
      case Kind::kFinite: return v < raw_;
    }
    return false;
  }

  friend constexpr bool operator==(const ScoreThreshold&, const ScoreThreshold&) = default;

 private:
  constexpr ScoreThreshold(Kind k, std::int64_t r) : kind_(k), raw_(r) {}
  Kind kind_;
  std::int64_t raw_;
};

struct SerialConfig {
  int B = 2;                ///< magnitude bits consumed per cycle
  int magnitude_bits = 11;  ///< K magnitude width (12-bit sign-magnitude)
  int q_bits = 12;

  /// B covers the whole K word (sign included): the engine degenerates to a
  /// single-cycle full-precision dot product with no sign cycle.
  bool single_cycle() const noexcept { return B > magnitude_bits; }

  int magnitude_cycles() const noexcept { return (magnitude_bits + B - 1) / B; }
  int max_cycles() const noexcept { return single_cycle() ? 1 : 1 + magnitude_cycles(); }

  void validate() const {
    if (B < 1) throw ConfigError("SerialConfig: B must be >= 1");
    if (magnitude_bits < 1) throw ConfigError("SerialConfig: magnitude_bits must be >= 1");
    if (q_bits < 2) throw ConfigError("SerialConfig: q_bits must be >= 2");
  }
};

struct MarginState {
  std::int64_t partial = 0;          ///< P
  std::int64_t margin = 0;           ///< M
  std::int64_t concordant_sum = 0;   ///< S
  int plane_index = 1;               ///< next plane to process, 1-based
  int plane_count = 0;
  int frac_bits = 0;                 ///< unit of P, M, S is 2^-frac_bits
  int bits_processed = 0;            ///< sign bit plus magnitude planes read
  int cycles_used = 0;
  bool terminated = false;

  double partial_sum() const noexcept { return std::ldexp(static_cast<double>(partial), -frac_bits); }
  double conservative_margin() const noexcept {
    return std::ldexp(static_cast<double>(margin), -frac_bits);
  }
  /// Upper bound P + M on the final score.
  std::int64_t bound() const noexcept { return partial + margin; }
  bool exhausted() const noexcept { return plane_index > plane_count; }
};

/// Sign cycle: XOR the signs and sum |q| over the concordant pairs.
inline MarginState init_margin(std::span<const FixedPointValue> q, std::span<const std::int8_t> k_signs,
                               QuantSpec k_spec) {
  if (q.size() != k_signs.size()) {
    throw DimensionError("init_margin: q has " + std::to_string(q.size()) + " elements, k has " +
                         std::to_string(k_signs.size()));
  }
  MarginState st;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i].sign() == k_signs[i]) st.concordant_sum += q[i].magnitude();
  }
  st.plane_count = k_spec.magnitude_bits();
  st.frac_bits = (q.empty() ? 0 : q.front().spec().frac_bits) + k_spec.frac_bits;
  st.margin = st.concordant_sum * k_spec.max_magnitude();
  st.bits_processed = 1;
  st.cycles_used = 1;
  return st;
}

inline MarginState init_margin(std::span<const FixedPointValue> q, const BitPlaneMatrix& k) {
  return init_margin(q, k.signs(), k.spec());
}

/// Threshold comparison after a cycle. Strict: P + M == th keeps going.
inline void apply_threshold(MarginState& st, const ScoreThreshold& th) noexcept {
  if (th.prunes(st.bound())) st.terminated = true;
}

/// Signed dot of q with one plane of k: sum_i sign(k_i) * q_i * bit_ij.
inline std::int64_t signed_plane_dot(std::span<const FixedPointValue> q, const BitPlaneMatrix& k, int j) {
  const auto bits = k.plane(j);
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (bits[i] != 0) acc += k.sign(i) * q[i].raw();
  }
  return acc;
}

/// One cycle: consumes the next B planes (zero-padded past the LSB), updates
/// P and M and applies the threshold.
inline MarginState step(MarginState st, const BitPlaneMatrix& k, std::span<const FixedPointValue> q,
                        const SerialConfig& cfg, const ScoreThreshold& th) {
  if (st.terminated) throw UsageError("step: computation already terminated");
  if (st.exhausted()) throw UsageError("step: all bit planes already processed");
  if (q.size() != k.size()) throw DimensionError("step: q and k lengths differ");
  const int last = std::min(st.plane_index + cfg.B - 1, st.plane_count);
  for (int j = st.plane_index; j <= last; ++j) {
    const std::int64_t w = k.plane_raw_weight(j);
    st.partial += w * signed_plane_dot(q, k, j);
    st.margin -= st.concordant_sum * w;
  }
  st.bits_processed += last - st.plane_index + 1;
  st.plane_index = last + 1;
  if (!cfg.single_cycle()) ++st.cycles_used;
  apply_threshold(st, th);
  return st;
}

struct Pruned {
  int terminated_after_cycle = 0;
  int bits_processed = 0;
  friend bool operator==(const Pruned&, const Pruned&) = default;
};

struct Completed {
  ExactScore score;
  int cycles = 0;
  int bits_processed = 0;
  friend bool operator==(const Completed&, const Completed&) = default;
};

using DotOutcome = std::variant<Pruned, Completed>;

inline bool is_pruned(const DotOutcome& o) noexcept { return std::holds_alternative<Pruned>(o); }

inline int cycles_of(const DotOutcome& o) noexcept {
  return std::visit(
      [](const auto& v) {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Pruned>) {
          return v.terminated_after_cycle;
        } else {
          return v.cycles;
        }
      },
      o);
}

inline int bits_of(const DotOutcome& o) noexcept {
  return std::visit([](const auto& v) { return v.bits_processed; }, o);
}

/// Runs the sign cycle and then steps until pruned or out of planes. The
/// margin is zero after the last plane, so the final check compares the exact
/// score: Completed iff score >= th.
inline DotOutcome run_dot(std::span<const FixedPointValue> q, const BitPlaneMatrix& k,
                          const ScoreThreshold& th, const SerialConfig& cfg) {
  cfg.validate();
  if (q.size() != k.size()) throw DimensionError("run_dot: q and k lengths differ");
  MarginState st = init_margin(q, k);
  // A single-cycle engine has no separate sign cycle to stop after.
  if (!cfg.single_cycle()) apply_threshold(st, th);
  while (!st.terminated && !st.exhausted()) st = step(st, k, q, cfg, th);
  if (st.terminated) return Pruned{st.cycles_used, st.bits_processed};
  return Completed{ExactScore{st.partial, st.frac_bits}, st.cycles_used, st.bits_processed};
}

/// Behavioral model of the two per-DPU counters that turn a stream of
/// outcomes into score indices. The bit-serial counter advances per cycle and
/// resets when a score finishes or is stopped early; the index counter
/// advances on each reset and is pushed when the early-stop flag is low.
class ScoreIndexCounters {
 public:
  explicit ScoreIndexCounters(std::size_t offset = 0, std::size_t stride = 1)
      : idx_(offset), stride_(stride) {}

  /// Feeds one finished outcome; returns the index to push on the IDX FIFO.
  std::optional<std::size_t> finish(const DotOutcome& o) {
    bit_counter_ += bits_of(o);
    const bool early_stop = is_pruned(o);
    const std::size_t current = idx_;
    bit_counter_ = 0;
    idx_ += stride_;
    if (early_stop) return std::nullopt;
    return current;
  }

  std::size_t next_index() const noexcept { return idx_; }

 private:
  int bit_counter_ = 0;
  std::size_t idx_;
  std::size_t stride_;
};

/// Keeps (column index, score) for every completed outcome, in column order.
inline std::vector<std::pair<std::size_t, ExactScore>> score_index_tracking(
    std::span<const DotOutcome> stream) {
  std::vector<std::pair<std::size_t, ExactScore>> out;
  ScoreIndexCounters counters;
  for (const auto& o : stream) {
    if (auto idx = counters.finish(o)) out.emplace_back(*idx, std::get<Completed>(o).score);
  }
  return out;
}

}  // namespace leopard
