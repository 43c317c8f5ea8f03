// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Cycle-level model of one tile.
//
// Front-end: n_qk bit-serial DPUs share the broadcast Q row; K columns are
// dealt round-robin (column j goes to DPU j mod n_qk). A DPU that finishes an
// unpruned score pushes it into the Score/IDX FIFOs in the same cycle, or
// holds it and stalls while the FIFOs are full. Back-end: the V-PU pops one
// score per ceil(d / lanes) cycles, never in the cycle it was pushed, and
// accumulates exp-weighted V rows with a running max; the row is divided by
// the running sum once it is complete. Row synchronization: the front-end
// starts row i + 1 only after it has finished row i and the back-end has
// finished row i - 1.
//
// The baseline uses the same back-end behind a single full-precision DPU
// that produces one unpruned score per cycle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "leopard/bitserial.hpp"
#include "leopard/error.hpp"
#include "leopard/fxp.hpp"
#include "leopard/matrix.hpp"
#include "leopard/tile_config.hpp"
#include "leopard/trace.hpp"

namespace leopard {

/// Energy in the five reporting categories.
struct EnergyBreakdown {
  double qk = 0.0;
  double key_buffer = 0.0;
  double softmax = 0.0;  ///< includes Score/IDX FIFO traffic
  double v_mac = 0.0;
  double value_buffer = 0.0;

  double frontend() const noexcept { return qk + key_buffer; }
  double backend() const noexcept { return softmax + v_mac + value_buffer; }
  double total() const noexcept { return frontend() + backend(); }

  EnergyBreakdown& operator+=(const EnergyBreakdown& o) noexcept {
    qk += o.qk;
    key_buffer += o.key_buffer;
    softmax += o.softmax;
    v_mac += o.v_mac;
    value_buffer += o.value_buffer;
    return *this;
  }
  friend bool operator==(const EnergyBreakdown&, const EnergyBreakdown&) = default;
};

/// Raw event tallies; energy is these counts times the table entries.
struct EventCounts {
  std::uint64_t dpu_lane_cycles = 0;  ///< DPU cycles x d
  std::uint64_t lane_bits = 0;        ///< K bits read x d
  std::uint64_t fifo_pushes = 0;
  std::uint64_t fifo_pops = 0;
  std::uint64_t scores_consumed = 0;
  std::uint64_t v_elements = 0;

  EventCounts& operator+=(const EventCounts& o) noexcept {
    dpu_lane_cycles += o.dpu_lane_cycles;
    lane_bits += o.lane_bits;
    fifo_pushes += o.fifo_pushes;
    fifo_pops += o.fifo_pops;
    scores_consumed += o.scores_consumed;
    v_elements += o.v_elements;
    return *this;
  }
  friend bool operator==(const EventCounts&, const EventCounts&) = default;
};

inline EnergyBreakdown energy_of(const EventCounts& e, const EnergyTable& t) {
  EnergyBreakdown b;
  const auto cyc = static_cast<double>(e.dpu_lane_cycles);
  const auto bits = static_cast<double>(e.lane_bits);
  b.qk = cyc * t.qk_cycle + bits * t.qk_mac_bit;
  b.key_buffer = cyc * t.key_buffer_access + bits * t.key_buffer_bit;
  b.softmax = static_cast<double>(e.scores_consumed) * t.softmax_op + static_cast<double>(e.fifo_pushes) * t.fifo_push +
              static_cast<double>(e.fifo_pops) * t.fifo_pop;
  b.v_mac = static_cast<double>(e.v_elements) * t.v_mac;
  b.value_buffer = static_cast<double>(e.v_elements) * t.value_buffer_read;
  return b;
}

/// Timing and work of one front-end/back-end configuration over a trace.
struct TileRun {
  std::uint64_t cycles = 0;
  std::uint64_t vpu_busy_cycles = 0;
  std::uint64_t frontend_active_cycles = 0;    ///< row spans, excluding row-sync stalls
  std::uint64_t frontend_stall_cycles = 0;     ///< front-end idle waiting on the back-end
  std::uint64_t backpressure_stall_cycles = 0; ///< DPU cycles blocked on a full FIFO
  std::uint64_t valid_scores = 0;
  std::uint64_t pruned_scores = 0;
  std::uint64_t bits_processed = 0;
  std::uint64_t pruned_bits = 0;
  std::vector<std::uint64_t> pruned_by_bits;   ///< index = bits processed when stopped
  EventCounts events;
  /// Attention outputs per head (layer-major), filled on request.
  std::vector<Matrix> outputs;
};

struct SimReport {
  std::uint64_t total_cycles = 0;
  std::uint64_t baseline_cycles = 0;
  double speedup = 0.0;
  EnergyBreakdown energy;
  EnergyBreakdown baseline_energy;
  std::uint64_t valid_scores = 0;
  std::uint64_t pruned_scores = 0;
  double pruning_rate = 0.0;
  double avg_bits_per_pruned_score = 0.0;
  double avg_bits_per_score = 0.0;
  std::uint64_t vpu_busy_cycles = 0;
  double vpu_utilization = 0.0;
  /// Back-end work over front-end time; above 1 the back-end is the
  /// bottleneck.
  double demanded_utilization = 0.0;
  std::uint64_t frontend_stall_cycles = 0;
  std::uint64_t backpressure_stall_cycles = 0;
  std::vector<std::uint64_t> pruned_by_bits;
  EventCounts events;
  EventCounts baseline_events;
};

struct SimOptions {
  bool functional_output = false;
};

namespace detail {

struct FrontEnd {
  int n_dpus = 1;
  SerialConfig serial;
  bool baseline = false;  ///< one full-precision score per cycle, nothing pruned
};

struct PairOutcome {
  std::uint16_t cycles = 0;
  std::uint16_t bits = 0;
  bool pruned = false;
  std::int64_t raw = 0;
};

inline std::vector<PairOutcome> head_outcomes(const WorkloadTrace& t, const HeadTrace& h, double threshold,
                                              const FrontEnd& fe) {
  const std::size_t n = h.valid_length;
  std::vector<PairOutcome> out(n * n);
  const auto th = fe.baseline ? ScoreThreshold::neg_inf() : ScoreThreshold::from_real(threshold, score_unit(t, h));
  std::vector<BitPlaneMatrix> ks;
  if (!fe.baseline) {
    ks.reserve(n);
    for (std::size_t j = 0; j < n; ++j) ks.push_back(to_bit_planes(code_row(h.k, j, h.d, t.k_spec)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto q = code_row(h.q, i, h.d, t.q_spec);
    for (std::size_t j = 0; j < n; ++j) {
      PairOutcome& po = out[i * n + j];
      if (fe.baseline) {
        const auto k = code_row(h.k, j, h.d, t.k_spec);
        po.cycles = 1;
        po.bits = static_cast<std::uint16_t>(t.k_spec.total_bits);
        po.raw = exact_fxp_dot(q, k).raw;
        continue;
      }
      const DotOutcome o = run_dot(q, ks[j], th, fe.serial);
      po.cycles = static_cast<std::uint16_t>(cycles_of(o));
      po.bits = static_cast<std::uint16_t>(bits_of(o));
      po.pruned = is_pruned(o);
      if (!po.pruned) po.raw = std::get<Completed>(o).score.raw;
    }
  }
  return out;
}

class RowAccumulator {
 public:
  explicit RowAccumulator(std::size_t d) : acc_(d, 0.0) {}

  void add(double x, std::span<const double> v) {
    if (x > max_) {
      const double r = count_ == 0 ? 0.0 : std::exp(max_ - x);
      for (double& a : acc_) a *= r;
      sum_ *= r;
      max_ = x;
    }
    const double w = std::exp(x - max_);
    sum_ += w;
    for (std::size_t c = 0; c < acc_.size(); ++c) acc_[c] += w * v[c];
    ++count_;
  }

  std::size_t count() const noexcept { return count_; }

  void finish(std::span<double> out) const {
    for (std::size_t c = 0; c < acc_.size(); ++c) out[c] = acc_[c] / sum_;
  }

 private:
  std::vector<double> acc_;
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

inline void simulate_head(const WorkloadTrace& t, const HeadTrace& h, double threshold, const FrontEnd& fe,
                          const TileConfig& cfg, bool functional, TileRun& run) {
  if (h.d > static_cast<std::size_t>(cfg.d)) {
    throw ConfigError("simulate: head dimension " + std::to_string(h.d) + " exceeds the " + std::to_string(cfg.d) +
                      "-tap DPU");
  }
  const std::size_t n = h.valid_length;
  Matrix out(h.seq_len, h.d);
  if (n == 0) {
    if (functional) run.outputs.push_back(std::move(out));
    return;
  }
  const auto outcomes = head_outcomes(t, h, threshold, fe);
  const double unit = score_unit(t, h);
  const Matrix v = dequantize_codes(h.v, h.seq_len, h.d, t.v_spec, h.v_scale);
  const auto lanes = static_cast<std::uint64_t>(h.d);
  const std::uint64_t vcyc = static_cast<std::uint64_t>(cfg.v_cycles(h.d));
  const std::size_t depth = std::min(cfg.score_fifo_depth, cfg.idx_fifo_depth);
  const auto n_dpus = static_cast<std::size_t>(fe.n_dpus);

  for (const auto& po : outcomes) {
    ++run.valid_scores;
    run.bits_processed += po.bits;
    run.events.dpu_lane_cycles += po.cycles * lanes;
    run.events.lane_bits += po.bits * lanes;
    if (po.pruned) {
      ++run.pruned_scores;
      run.pruned_bits += po.bits;
      if (run.pruned_by_bits.size() <= po.bits) run.pruned_by_bits.resize(po.bits + 1u, 0);
      ++run.pruned_by_bits[po.bits];
    }
  }

  struct Dpu {
    std::size_t next = 0;     // position in this DPU's column list for the current row
    std::size_t col = 0;
    int remaining = 0;
    bool holding = false;
  };
  struct Entry {
    std::size_t row;
    std::size_t col;
    std::uint64_t pushed;
  };
  std::vector<std::size_t> cols_of_dpu(n_dpus, 0);
  for (std::size_t j = 0; j < n; ++j) ++cols_of_dpu[j % n_dpus];
  std::vector<std::size_t> survivors(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) survivors[i] += outcomes[i * n + j].pruned ? 0 : 1;

  std::vector<Dpu> dpus(n_dpus);
  std::deque<Entry> fifo;
  std::vector<std::optional<std::uint64_t>> fe_end(n), be_end(n);
  std::vector<std::uint64_t> be_last(n, 0);
  std::vector<std::size_t> consumed(n, 0);
  std::vector<RowAccumulator> acc;
  if (functional) acc.assign(n, RowAccumulator(h.d));

  std::size_t row = 0;          // row on the front-end
  bool fe_running = true;       // false while waiting for row sync
  std::uint64_t row_start = 0;
  std::uint64_t be_free = 0;
  std::size_t be_row_done = 0;  // rows the back-end has completely finished
  std::uint64_t t_cycle = 0;

  auto settle_back_end = [&] {
    while (be_row_done < n && fe_end[be_row_done] && consumed[be_row_done] == survivors[be_row_done]) {
      be_end[be_row_done] = std::max(*fe_end[be_row_done], be_last[be_row_done]);
      ++be_row_done;
    }
  };

  for (;; ++t_cycle) {
    // Back-end pops first; an entry pushed this cycle is not visible yet.
    if (be_free <= t_cycle && !fifo.empty() && fifo.front().pushed < t_cycle) {
      const Entry e = fifo.front();
      fifo.pop_front();
      be_free = t_cycle + vcyc;
      run.vpu_busy_cycles += vcyc;
      ++run.events.fifo_pops;
      ++run.events.scores_consumed;
      run.events.v_elements += lanes;
      ++consumed[e.row];
      be_last[e.row] = t_cycle + vcyc;
      if (functional) {
        const double x = static_cast<double>(outcomes[e.row * n + e.col].raw) * unit;
        acc[e.row].add(x, v.row(e.col));
      }
    }
    settle_back_end();

    if (row < n && !fe_running) {
      const bool prev_done = row < 2 || be_end[row - 2];
      if (prev_done && t_cycle >= *fe_end[row - 1] && (row < 2 || t_cycle >= *be_end[row - 2])) {
        fe_running = true;
        row_start = t_cycle;
      } else {
        ++run.frontend_stall_cycles;
      }
    }

    if (row < n && fe_running) {
      bool all_done = true;
      for (std::size_t p = 0; p < n_dpus; ++p) {
        Dpu& dp = dpus[p];
        if (dp.holding) {
          if (fifo.size() < depth) {
            fifo.push_back({row, dp.col, t_cycle});
            ++run.events.fifo_pushes;
            dp.holding = false;
            ++dp.next;
          } else {
            ++run.backpressure_stall_cycles;
          }
          all_done = all_done && !dp.holding && dp.next == cols_of_dpu[p];
          continue;
        }
        if (dp.remaining == 0) {
          if (dp.next == cols_of_dpu[p]) continue;
          dp.col = p + dp.next * n_dpus;
          dp.remaining = outcomes[row * n + dp.col].cycles;
        }
        if (--dp.remaining == 0) {
          if (outcomes[row * n + dp.col].pruned) {
            ++dp.next;
          } else if (fifo.size() < depth) {
            fifo.push_back({row, dp.col, t_cycle});
            ++run.events.fifo_pushes;
            ++dp.next;
          } else {
            dp.holding = true;
          }
        }
        all_done = all_done && dp.remaining == 0 && !dp.holding && dp.next == cols_of_dpu[p];
      }
      if (all_done) {
        fe_end[row] = t_cycle + 1;
        run.frontend_active_cycles += t_cycle + 1 - row_start;
        for (auto& dp : dpus) dp = Dpu{};
        ++row;
        fe_running = false;
        settle_back_end();
      }
    }

    if (row == n && be_row_done == n) break;
  }

  const std::uint64_t head_cycles = std::max(*fe_end[n - 1], *be_end[n - 1]);
  run.cycles += head_cycles;

  if (functional) {
    for (std::size_t i = 0; i < n; ++i) {
      if (acc[i].count() == 0) {
        for (std::size_t c = 0; c < h.d; ++c) out(i, c) = v(i, c);
      } else {
        acc[i].finish(out.row(i));
      }
    }
    run.outputs.push_back(std::move(out));
  }
}

inline TileRun run_tile(const WorkloadTrace& t, const FrontEnd& fe, const TileConfig& cfg, bool functional) {
  validate_trace(t);
  cfg.validate();
  fe.serial.validate();
  if (fe.n_dpus < 1) throw ConfigError("simulate: need at least one DPU");
  if (fe.serial.magnitude_bits != t.k_spec.magnitude_bits()) {
    throw ConfigError("simulate: tile k_bits " + std::to_string(cfg.k_bits) + " does not match the trace K spec (" +
                      std::to_string(t.k_spec.total_bits) + " bits)");
  }
  TileRun run;
  for (const auto& l : t.layers)
    for (const auto& h : l.heads) simulate_head(t, h, l.threshold, fe, cfg, functional, run);
  return run;
}

inline double ratio(std::uint64_t a, std::uint64_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

inline SimReport make_report(const TileRun& tile, const TileRun& base, const EnergyTable& et) {
  SimReport r;
  r.total_cycles = tile.cycles;
  r.baseline_cycles = base.cycles;
  r.speedup = ratio(base.cycles, tile.cycles);
  r.events = tile.events;
  r.baseline_events = base.events;
  r.energy = energy_of(tile.events, et);
  r.baseline_energy = energy_of(base.events, et);
  r.valid_scores = tile.valid_scores;
  r.pruned_scores = tile.pruned_scores;
  r.pruning_rate = ratio(tile.pruned_scores, tile.valid_scores);
  r.avg_bits_per_pruned_score = ratio(tile.pruned_bits, tile.pruned_scores);
  r.avg_bits_per_score = ratio(tile.bits_processed, tile.valid_scores);
  r.vpu_busy_cycles = tile.vpu_busy_cycles;
  r.vpu_utilization = ratio(tile.vpu_busy_cycles, tile.cycles);
  r.demanded_utilization = ratio(tile.vpu_busy_cycles, tile.frontend_active_cycles);
  r.frontend_stall_cycles = tile.frontend_stall_cycles;
  r.backpressure_stall_cycles = tile.backpressure_stall_cycles;
  r.pruned_by_bits = tile.pruned_by_bits;
  return r;
}

}  // namespace detail

/// Tile timing and work with the trace's thresholds.
inline TileRun run_tile(const WorkloadTrace& t, const TileConfig& cfg, const SimOptions& opt = {}) {
  return detail::run_tile(t, detail::FrontEnd{cfg.n_qk, cfg.serial(), false}, cfg, opt.functional_output);
}

/// Baseline timing and work: one 12x12-bit DPU, no pruning, same back-end.
inline TileRun run_baseline(const WorkloadTrace& t, const TileConfig& cfg, const SimOptions& opt = {}) {
  SerialConfig full = cfg.serial();
  full.B = full.magnitude_bits + 1;
  return detail::run_tile(t, detail::FrontEnd{1, full, true}, cfg, opt.functional_output);
}

inline SimReport simulate_tile(const WorkloadTrace& t, const TileConfig& cfg, const EnergyTable& et) {
  et.validate();
  return detail::make_report(run_tile(t, cfg), run_baseline(t, cfg), et);
}

/// The baseline on its own; speedup is 1 by construction.
inline SimReport simulate_baseline(const WorkloadTrace& t, const TileConfig& cfg, const EnergyTable& et) {
  et.validate();
  const TileRun base = run_baseline(t, cfg);
  return detail::make_report(base, base, et);
}

/// Copy of `t` with every layer threshold set to -inf.
inline WorkloadTrace without_pruning(WorkloadTrace t) {
  for (auto& l : t.layers) l.threshold = -std::numeric_limits<double>::infinity();
  return t;
}

struct CurvePoint {
  int bits = 0;
  double cumulative_pruning_rate = 0.0;
};

/// Fraction of valid scores pruned after at most `bits` processed bits, for
/// bits = 0 .. k_bits.
inline std::vector<CurvePoint> cumulative_pruning_curve(const WorkloadTrace& t, const TileConfig& cfg) {
  validate_trace(t);
  cfg.validate();
  const detail::FrontEnd fe{cfg.n_qk, cfg.serial(), false};
  std::vector<std::uint64_t> hist(static_cast<std::size_t>(t.k_spec.total_bits) + 1, 0);
  std::uint64_t valid = 0;
  for (const auto& l : t.layers) {
    for (const auto& h : l.heads) {
      for (const auto& po : detail::head_outcomes(t, h, l.threshold, fe)) {
        ++valid;
        if (po.pruned) ++hist[std::min<std::size_t>(po.bits, hist.size() - 1)];
      }
    }
  }
  std::vector<CurvePoint> out;
  std::uint64_t cum = 0;
  for (std::size_t b = 0; b < hist.size(); ++b) {
    cum += hist[b];
    out.push_back({static_cast<int>(b), detail::ratio(cum, valid)});
  }
  return out;
}

namespace detail {

/// Runs f(0..n-1) on up to `threads` workers; results land at their index.
template <class R, class F>
std::vector<R> parallel_map(std::size_t n, unsigned threads, F f) {
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (w == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < w; ++i) pool.emplace_back(work, i, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace detail

struct NqkPoint {
  int n_qk = 0;
  SimReport report;
};

/// Simulates the tile for n_qk = lo .. hi.
inline std::vector<NqkPoint> sweep_nqk(const WorkloadTrace& t, const TileConfig& base, int lo, int hi,
                                       const EnergyTable& et, unsigned threads = 1) {
  if (lo < 1 || hi < lo) throw ParameterError("sweep_nqk: need 1 <= lo <= hi");
  validate_trace(t);
  const TileRun baseline = run_baseline(t, base);
  return detail::parallel_map<NqkPoint>(static_cast<std::size_t>(hi - lo + 1), threads, [&](std::size_t i) {
    TileConfig c = base;
    c.n_qk = lo + static_cast<int>(i);
    return NqkPoint{c.n_qk, detail::make_report(run_tile(t, c), baseline, et)};
  });
}

struct BitPoint {
  int B = 0;
  double qk_per_score = 0.0;
  double key_buffer_per_score = 0.0;
  double frontend_per_score = 0.0;
  double normalized = 0.0;  ///< frontend_per_score relative to B = 12
  SimReport report;
};

/// Front-end energy per score for each granularity, normalized to a B = 12
/// run of the same tile.
inline std::vector<BitPoint> sweep_bit_granularity(const WorkloadTrace& t, const TileConfig& base,
                                                   const std::vector<int>& Bs, const EnergyTable& et,
                                                   unsigned threads = 1) {
  if (Bs.empty()) throw ParameterError("sweep_bit_granularity: empty B list");
  for (int b : Bs)
    if (b < 1) throw ParameterError("sweep_bit_granularity: B must be positive");
  validate_trace(t);
  const TileRun baseline = run_baseline(t, base);
  auto point = [&](int b) {
    TileConfig c = base;
    c.B = b;
    BitPoint p;
    p.B = b;
    p.report = detail::make_report(run_tile(t, c), baseline, et);
    const double n = static_cast<double>(std::max<std::uint64_t>(1, p.report.valid_scores));
    p.qk_per_score = p.report.energy.qk / n;
    p.key_buffer_per_score = p.report.energy.key_buffer / n;
    p.frontend_per_score = p.report.energy.frontend() / n;
    return p;
  };
  auto pts = detail::parallel_map<BitPoint>(Bs.size(), threads, [&](std::size_t i) { return point(Bs[i]); });
  const auto anchor_it = std::find_if(pts.begin(), pts.end(), [](const BitPoint& p) { return p.B == 12; });
  const double anchor = anchor_it != pts.end() ? anchor_it->frontend_per_score : point(12).frontend_per_score;
  for (auto& p : pts) p.normalized = anchor > 0.0 ? p.frontend_per_score / anchor : 0.0;
  return pts;
}

}  // namespace leopard
