// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// JSON and CSV encodings of configs, reports, sweeps and training runs.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/error.hpp"
#include "leopard/learner.hpp"
#include "leopard/simulator.hpp"
#include "leopard/tile_config.hpp"
#include "leopard/trace.hpp"

namespace leopard {

using ojson = nlohmann::ordered_json;

inline std::uint64_t fnv1a64(const std::string& s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline ojson to_json(const TileConfig& c) {
  return {{"n_qk", c.n_qk},
          {"B", c.B},
          {"d", c.d},
          {"q_bits", c.q_bits},
          {"k_bits", c.k_bits},
          {"v_bits", c.v_bits},
          {"softmax_in_bits", c.softmax_in_bits},
          {"softmax_out_bits", c.softmax_out_bits},
          {"score_fifo_depth", c.score_fifo_depth},
          {"idx_fifo_depth", c.idx_fifo_depth},
          {"key_buffer_kb", c.key_buffer_kb},
          {"value_buffer_kb", c.value_buffer_kb},
          {"vpu_lanes", c.vpu_lanes}};
}

inline ojson to_json(const EnergyTable& e) {
  return {{"qk_cycle", e.qk_cycle},
          {"qk_mac_bit", e.qk_mac_bit},
          {"key_buffer_access", e.key_buffer_access},
          {"key_buffer_bit", e.key_buffer_bit},
          {"softmax_op", e.softmax_op},
          {"fifo_push", e.fifo_push},
          {"fifo_pop", e.fifo_pop},
          {"v_mac", e.v_mac},
          {"value_buffer_read", e.value_buffer_read}};
}

namespace detail {

template <class T>
void override_field(const nlohmann::json& j, const char* key, T& dst, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(ctx + "." + key + ": wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const ojson& known, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError(ctx + ": unknown key '" + k + "'");
  }
}

}  // namespace detail

/// `base` with every key present in `j` replaced.
inline TileConfig tile_config_from_json(const nlohmann::json& j, TileConfig c = {}) {
  detail::reject_unknown(j, to_json(c), "tile");
  detail::override_field(j, "n_qk", c.n_qk, "tile");
  detail::override_field(j, "B", c.B, "tile");
  detail::override_field(j, "d", c.d, "tile");
  detail::override_field(j, "q_bits", c.q_bits, "tile");
  detail::override_field(j, "k_bits", c.k_bits, "tile");
  detail::override_field(j, "v_bits", c.v_bits, "tile");
  detail::override_field(j, "softmax_in_bits", c.softmax_in_bits, "tile");
  detail::override_field(j, "softmax_out_bits", c.softmax_out_bits, "tile");
  detail::override_field(j, "score_fifo_depth", c.score_fifo_depth, "tile");
  detail::override_field(j, "idx_fifo_depth", c.idx_fifo_depth, "tile");
  detail::override_field(j, "key_buffer_kb", c.key_buffer_kb, "tile");
  detail::override_field(j, "value_buffer_kb", c.value_buffer_kb, "tile");
  detail::override_field(j, "vpu_lanes", c.vpu_lanes, "tile");
  c.validate();
  return c;
}

inline EnergyTable energy_table_from_json(const nlohmann::json& j, EnergyTable e = {}) {
  detail::reject_unknown(j, to_json(e), "energy");
  detail::override_field(j, "qk_cycle", e.qk_cycle, "energy");
  detail::override_field(j, "qk_mac_bit", e.qk_mac_bit, "energy");
  detail::override_field(j, "key_buffer_access", e.key_buffer_access, "energy");
  detail::override_field(j, "key_buffer_bit", e.key_buffer_bit, "energy");
  detail::override_field(j, "softmax_op", e.softmax_op, "energy");
  detail::override_field(j, "fifo_push", e.fifo_push, "energy");
  detail::override_field(j, "fifo_pop", e.fifo_pop, "energy");
  detail::override_field(j, "v_mac", e.v_mac, "energy");
  detail::override_field(j, "value_buffer_read", e.value_buffer_read, "energy");
  e.validate();
  return e;
}

inline ojson to_json(const EnergyBreakdown& e) {
  return {{"qk", e.qk},
          {"key_buffer", e.key_buffer},
          {"softmax", e.softmax},
          {"v_mac", e.v_mac},
          {"value_buffer", e.value_buffer},
          {"total", e.total()}};
}

inline ojson to_json(const EventCounts& e) {
  return {{"dpu_lane_cycles", e.dpu_lane_cycles}, {"lane_bits", e.lane_bits},
          {"fifo_pushes", e.fifo_pushes},         {"fifo_pops", e.fifo_pops},
          {"scores_consumed", e.scores_consumed}, {"v_elements", e.v_elements}};
}

inline ojson to_json(const SimReport& r) {
  return {{"total_cycles", r.total_cycles},
          {"baseline_cycles", r.baseline_cycles},
          {"speedup", r.speedup},
          {"valid_scores", r.valid_scores},
          {"pruned_scores", r.pruned_scores},
          {"pruning_rate", r.pruning_rate},
          {"avg_bits_per_pruned_score", r.avg_bits_per_pruned_score},
          {"avg_bits_per_score", r.avg_bits_per_score},
          {"vpu_busy_cycles", r.vpu_busy_cycles},
          {"vpu_utilization", r.vpu_utilization},
          {"demanded_utilization", r.demanded_utilization},
          {"frontend_stall_cycles", r.frontend_stall_cycles},
          {"backpressure_stall_cycles", r.backpressure_stall_cycles},
          {"energy", to_json(r.energy)},
          {"baseline_energy", to_json(r.baseline_energy)},
          {"energy_reduction", r.energy.total() > 0 ? r.baseline_energy.total() / r.energy.total() : 0.0},
          {"pruned_by_bits", r.pruned_by_bits},
          {"events", to_json(r.events)},
          {"baseline_events", to_json(r.baseline_events)}};
}

inline ojson to_json(const std::vector<CurvePoint>& curve) {
  ojson a = ojson::array();
  for (const auto& p : curve) a.push_back({{"bits", p.bits}, {"cumulative_pruning_rate", p.cumulative_pruning_rate}});
  return a;
}

namespace detail {

inline std::string csv_num(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

}  // namespace detail

/// Columns: n_qk,total_cycles,baseline_cycles,speedup,pruning_rate,
/// vpu_busy_cycles,vpu_utilization,demanded_utilization,
/// frontend_stall_cycles,energy_total
inline std::string nqk_csv(const std::vector<NqkPoint>& pts) {
  std::ostringstream os;
  os << "n_qk,total_cycles,baseline_cycles,speedup,pruning_rate,vpu_busy_cycles,vpu_utilization,"
        "demanded_utilization,frontend_stall_cycles,energy_total\n";
  for (const auto& p : pts) {
    const auto& r = p.report;
    os << p.n_qk << ',' << r.total_cycles << ',' << r.baseline_cycles << ',' << detail::csv_num(r.speedup) << ','
       << detail::csv_num(r.pruning_rate) << ',' << r.vpu_busy_cycles << ',' << detail::csv_num(r.vpu_utilization)
       << ',' << detail::csv_num(r.demanded_utilization) << ',' << r.frontend_stall_cycles << ','
       << detail::csv_num(r.energy.total()) << '\n';
  }
  return os.str();
}

/// Columns: B,qk_per_score,key_buffer_per_score,frontend_per_score,
/// normalized,total_cycles,avg_bits_per_score,avg_bits_per_pruned_score
inline std::string bits_csv(const std::vector<BitPoint>& pts) {
  std::ostringstream os;
  os << "B,qk_per_score,key_buffer_per_score,frontend_per_score,normalized,total_cycles,avg_bits_per_score,"
        "avg_bits_per_pruned_score\n";
  for (const auto& p : pts) {
    os << p.B << ',' << detail::csv_num(p.qk_per_score) << ',' << detail::csv_num(p.key_buffer_per_score) << ','
       << detail::csv_num(p.frontend_per_score) << ',' << detail::csv_num(p.normalized) << ','
       << p.report.total_cycles << ',' << detail::csv_num(p.report.avg_bits_per_score) << ','
       << detail::csv_num(p.report.avg_bits_per_pruned_score) << '\n';
  }
  return os.str();
}

inline ojson to_json(const EpochStats& e) {
  return {{"epoch", e.epoch},       {"loss", e.loss},         {"normalized_loss", e.normalized_loss},
          {"task_loss", e.task_loss}, {"accuracy", e.accuracy}, {"sparsity", e.sparsity},
          {"thresholds", e.thresholds}};
}

inline ojson to_json(const TrainStats& s) {
  ojson a = ojson::array();
  for (const auto& e : s.epochs) a.push_back(to_json(e));
  return a;
}

inline constexpr int kThresholdFileVersion = 1;

inline std::string encode_thresholds(const std::vector<double>& th) {
  ojson j;
  j["format"] = "leopard-thresholds";
  j["version"] = kThresholdFileVersion;
  ojson a = ojson::array();
  for (double v : th) {
    if (std::isinf(v)) {
      a.push_back(v < 0 ? "-inf" : "+inf");
    } else {
      a.push_back(v);
    }
  }
  j["thresholds"] = std::move(a);
  return j.dump(2) + "\n";
}

inline std::vector<double> decode_thresholds(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("thresholds", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "leopard-thresholds") {
    throw ValidationError("thresholds.format", "expected \"leopard-thresholds\"");
  }
  if (!j.contains("version") || j["version"] != kThresholdFileVersion) {
    throw ValidationError("thresholds.version", "unsupported version");
  }
  if (!j.contains("thresholds") || !j["thresholds"].is_array()) {
    throw ValidationError("thresholds.thresholds", "missing");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < j["thresholds"].size(); ++i) {
    out.push_back(
        detail::threshold_from_json(j["thresholds"][i], "thresholds.thresholds[" + std::to_string(i) + "]"));
  }
  return out;
}

/// Replaces the per-layer thresholds of `t`.
inline void apply_thresholds(WorkloadTrace& t, const std::vector<double>& th) {
  if (th.size() != t.layers.size()) {
    throw ValidationError("thresholds", "file has " + std::to_string(th.size()) + " entries, trace has " +
                                            std::to_string(t.layers.size()) + " layers");
  }
  for (std::size_t l = 0; l < th.size(); ++l) t.layers[l].threshold = th[l];
}

}  // namespace leopard
