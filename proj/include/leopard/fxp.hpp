// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Sign-magnitude fixed point.
//
// A value with spec {total_bits, frac_bits} holds one sign bit and
// total_bits - 1 magnitude bits; the magnitude integer m represents
// m * 2^-frac_bits, times a per-tensor scale. Bit planes are numbered from 1
// (MSB) to magnitude_bits (LSB).

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "leopard/error.hpp"

namespace leopard {

struct QuantSpec {
  int total_bits = 12;
  int frac_bits = 11;

  /// Spec for values scaled into (-1, +1): every magnitude bit is fractional.
  static constexpr QuantSpec unit(int total_bits) { return {total_bits, total_bits - 1}; }

  constexpr int magnitude_bits() const noexcept { return total_bits - 1; }
  constexpr std::int64_t max_magnitude() const noexcept {
    return (std::int64_t{1} << magnitude_bits()) - 1;
  }
  /// Real value of one LSB before the tensor scale is applied.
  double lsb() const noexcept { return std::ldexp(1.0, -frac_bits); }

  void validate() const {
    if (total_bits < 2 || total_bits > 32) {
      throw ConfigError("QuantSpec: total_bits must be in [2, 32], got " + std::to_string(total_bits));
    }
    if (frac_bits < 0 || frac_bits > total_bits - 1) {
      throw ConfigError("QuantSpec: frac_bits must be in [0, total_bits - 1], got " +
                        std::to_string(frac_bits));
    }
  }

  friend constexpr bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

class FixedPointValue {
 public:
  FixedPointValue() = default;

  /// Builds a value from its signed integer code. Negative zero is
  /// normalized to positive zero.
  static FixedPointValue from_raw(std::int64_t raw, QuantSpec spec) {
    spec.validate();
    const std::int64_t mag = raw < 0 ? -raw : raw;
    if (mag > spec.max_magnitude()) {
      throw ConfigError("FixedPointValue: magnitude " + std::to_string(mag) + " exceeds " +
                        std::to_string(spec.magnitude_bits()) + " bits");
    }
    return FixedPointValue(raw < 0 ? -1 : 1, static_cast<std::uint32_t>(mag), spec);
  }

  static FixedPointValue from_sign_magnitude(int sign, std::uint32_t magnitude, QuantSpec spec) {
    if (sign != 1 && sign != -1) throw ConfigError("FixedPointValue: sign must be +1 or -1");
    return from_raw(sign * static_cast<std::int64_t>(magnitude), spec);
  }

  int sign() const noexcept { return sign_; }
  std::uint32_t magnitude() const noexcept { return magnitude_; }
  const QuantSpec& spec() const noexcept { return spec_; }
  std::int64_t raw() const noexcept { return sign_ * static_cast<std::int64_t>(magnitude_); }

  /// True when bit plane j (1 = MSB) of the magnitude is set.
  bool plane_bit(int j) const noexcept {
    return ((magnitude_ >> (spec_.magnitude_bits() - j)) & 1u) != 0;
  }

  friend bool operator==(const FixedPointValue&, const FixedPointValue&) = default;

 private:
  FixedPointValue(int sign, std::uint32_t magnitude, QuantSpec spec)
      : sign_(magnitude == 0 ? 1 : sign), magnitude_(magnitude), spec_(spec) {}

  int sign_ = 1;
  std::uint32_t magnitude_ = 0;
  QuantSpec spec_{};
};

/// Round-to-nearest (ties away from zero) with saturation at the
/// symmetric range boundary.
inline FixedPointValue quantize(double x, QuantSpec spec, double scale = 1.0) {
  spec.validate();
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("quantize: scale must be positive");
  if (std::isnan(x)) throw ConfigError("quantize: NaN input");
  const double scaled = std::ldexp(std::abs(x) / scale, spec.frac_bits);
  const double max_mag = static_cast<double>(spec.max_magnitude());
  const double mag = std::min(std::round(scaled), max_mag);
  return FixedPointValue::from_raw((x < 0 ? -1 : 1) * static_cast<std::int64_t>(mag), spec);
}

inline double dequantize(const FixedPointValue& v, double scale = 1.0) {
  return std::ldexp(static_cast<double>(v.raw()), -v.spec().frac_bits) * scale;
}

inline std::vector<FixedPointValue> quantize_vector(std::span<const double> xs, QuantSpec spec,
                                                    double scale = 1.0) {
  std::vector<FixedPointValue> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(quantize(x, spec, scale));
  return out;
}

/// Bit-serial layout of one K vector: a sign per element and the magnitude
/// bits as planes, MSB first.
class BitPlaneMatrix {
 public:
  BitPlaneMatrix() = default;

  std::size_t size() const noexcept { return signs_.size(); }
  int plane_count() const noexcept { return spec_.magnitude_bits(); }
  const QuantSpec& spec() const noexcept { return spec_; }

  int sign(std::size_t i) const { return signs_[i]; }
  std::span<const std::int8_t> signs() const noexcept { return signs_; }

  /// Plane j, 1-based from the MSB. One 0/1 entry per element.
  std::span<const std::uint8_t> plane(int j) const {
    if (j < 1 || j > plane_count()) throw UsageError("BitPlaneMatrix: plane index out of range");
    return planes_[static_cast<std::size_t>(j - 1)];
  }

  /// Integer weight of plane j in units of the LSB: 2^(magnitude_bits - j).
  std::int64_t plane_raw_weight(int j) const noexcept {
    return std::int64_t{1} << (spec_.magnitude_bits() - j);
  }

  /// Real weight of plane j, 2^-j when every magnitude bit is fractional.
  double plane_weight(int j) const noexcept {
    return std::ldexp(1.0, spec_.magnitude_bits() - j - spec_.frac_bits);
  }

  FixedPointValue reconstruct(std::size_t i) const {
    std::int64_t mag = 0;
    for (int j = 1; j <= plane_count(); ++j) {
      if (planes_[static_cast<std::size_t>(j - 1)][i] != 0) mag += plane_raw_weight(j);
    }
    return FixedPointValue::from_raw(signs_[i] * mag, spec_);
  }

  friend BitPlaneMatrix to_bit_planes(std::span<const FixedPointValue> column);

 private:
  QuantSpec spec_{};
  std::vector<std::int8_t> signs_;
  std::vector<std::vector<std::uint8_t>> planes_;
};

inline BitPlaneMatrix to_bit_planes(std::span<const FixedPointValue> column) {
  BitPlaneMatrix m;
  if (!column.empty()) m.spec_ = column.front().spec();
  for (const auto& v : column) {
    if (!(v.spec() == m.spec_)) throw ConfigError("to_bit_planes: elements use different QuantSpecs");
  }
  const int planes = m.spec_.magnitude_bits();
  m.signs_.reserve(column.size());
  m.planes_.assign(static_cast<std::size_t>(planes), std::vector<std::uint8_t>(column.size(), 0));
  for (std::size_t i = 0; i < column.size(); ++i) {
    m.signs_.push_back(static_cast<std::int8_t>(column[i].sign()));
    for (int j = 1; j <= planes; ++j) {
      m.planes_[static_cast<std::size_t>(j - 1)][i] = column[i].plane_bit(j) ? 1 : 0;
    }
  }
  return m;
}

/// Exact dot product in integer units of 2^-frac_bits.
struct ExactScore {
  std::int64_t raw = 0;
  int frac_bits = 0;

  double value() const noexcept { return std::ldexp(static_cast<double>(raw), -frac_bits); }
  friend bool operator==(const ExactScore&, const ExactScore&) = default;
};

/// Bits of accumulator needed to hold any dot product of `length` terms
/// without rounding: ceil(log2(length)) + both magnitude widths.
inline int exact_accumulator_bits(std::size_t length, QuantSpec q, QuantSpec k) {
  const int len_bits = length <= 1 ? 0 : static_cast<int>(std::bit_width(length - 1));
  return len_bits + q.magnitude_bits() + k.magnitude_bits();
}

/// Integer dot product with no intermediate rounding. The int64 accumulator
/// holds up to 63 magnitude bits, which covers d = 2^20 at 12 x 12 bits.
inline ExactScore exact_fxp_dot(std::span<const FixedPointValue> q, std::span<const FixedPointValue> k) {
  if (q.size() != k.size()) {
    throw DimensionError("exact_fxp_dot: length " + std::to_string(q.size()) + " vs " +
                         std::to_string(k.size()));
  }
  if (q.empty()) return {};
  const QuantSpec qs = q.front().spec();
  const QuantSpec ks = k.front().spec();
  if (exact_accumulator_bits(q.size(), qs, ks) > 63) {
    throw ConfigError("exact_fxp_dot: operands too wide for an exact 64-bit accumulator");
  }
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q[i].spec() == qs) || !(k[i].spec() == ks)) {
      throw ConfigError("exact_fxp_dot: mixed QuantSpecs within an operand");
    }
    acc += q[i].raw() * k[i].raw();
  }
  return {acc, qs.frac_bits + ks.frac_bits};
}

}  // namespace leopard
