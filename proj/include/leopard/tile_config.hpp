// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Tile geometry and the per-event energy table.

#pragma once

#include <cstddef>
#include <string>

#include "leopard/bitserial.hpp"
#include "leopard/error.hpp"
#include "leopard/fxp.hpp"

namespace leopard {

struct TileConfig {
  int n_qk = 6;
  int B = 2;
  int d = 64;
  int q_bits = 12;
  int k_bits = 12;
  int v_bits = 16;
  int softmax_in_bits = 24;
  int softmax_out_bits = 16;
  std::size_t score_fifo_depth = 512;
  std::size_t idx_fifo_depth = 512;
  int key_buffer_kb = 48;
  int value_buffer_kb = 64;
  /// Width of the V-PU MAC array; a V row of d elements takes ceil(d / width)
  /// cycles.
  int vpu_lanes = 64;

  /// Area-efficient tile: six bit-serial DPUs.
  static TileConfig ae() { return TileConfig{}; }

  /// Highly-parallel tile: eight bit-serial DPUs.
  static TileConfig hp() {
    TileConfig c;
    c.n_qk = 8;
    return c;
  }

  SerialConfig serial() const { return SerialConfig{B, k_bits - 1, q_bits}; }

  int v_cycles(std::size_t head_dim) const {
    const auto lanes = static_cast<std::size_t>(vpu_lanes);
    return static_cast<int>(head_dim == 0 ? 1 : (head_dim + lanes - 1) / lanes);
  }

  void validate() const {
    auto pos = [](long long v, const char* name) {
      if (v <= 0) throw ConfigError(std::string("TileConfig: ") + name + " must be positive");
    };
    pos(n_qk, "n_qk");
    pos(B, "B");
    pos(d, "d");
    pos(q_bits, "q_bits");
    pos(k_bits, "k_bits");
    pos(v_bits, "v_bits");
    pos(softmax_in_bits, "softmax_in_bits");
    pos(softmax_out_bits, "softmax_out_bits");
    pos(static_cast<long long>(score_fifo_depth), "score_fifo_depth");
    pos(static_cast<long long>(idx_fifo_depth), "idx_fifo_depth");
    pos(key_buffer_kb, "key_buffer_kb");
    pos(value_buffer_kb, "value_buffer_kb");
    pos(vpu_lanes, "vpu_lanes");
    if (k_bits < 2 || q_bits < 2) throw ConfigError("TileConfig: q_bits and k_bits must be >= 2");
  }

  friend bool operator==(const TileConfig&, const TileConfig&) = default;
};

/// Abstract energy units per event. Front-end costs are per MAC lane (one lane
/// per vector element), so a score's energy scales with d.
struct EnergyTable {
  double qk_cycle = 0.45;            ///< per DPU cycle per lane: operand latches and control
  double qk_mac_bit = 0.5;           ///< per K bit per lane
  double key_buffer_access = 0.15;   ///< per DPU cycle per lane: one B-bit slice fetch
  double key_buffer_bit = 0.25;      ///< per K bit per lane
  double softmax_op = 2.0;           ///< per consumed score
  double fifo_push = 0.25;           ///< per Score/IDX FIFO entry
  double fifo_pop = 0.25;
  double v_mac = 11.0;               ///< per V element multiplied
  double value_buffer_read = 6.85;   ///< per V element read

  void validate() const {
    for (double v : {qk_cycle, qk_mac_bit, key_buffer_access, key_buffer_bit, softmax_op, fifo_push, fifo_pop,
                     v_mac, value_buffer_read}) {
      if (!(v >= 0.0)) throw ConfigError("EnergyTable: costs must be non-negative");
    }
  }

  friend bool operator==(const EnergyTable&, const EnergyTable&) = default;
};

}  // namespace leopard
