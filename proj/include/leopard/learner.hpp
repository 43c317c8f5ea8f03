// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Learned per-layer pruning thresholds.
//
// Training replaces the hard pruning step with a soft threshold
//
//   st(x) = x tanh(s (x - th))   x >= th
//         = c tanh(s (x - th))   x <  th
//
// which sends pruned scores to about -c, and adds lambda times a smooth count
// of surviving scores, sum_j sigmoid(k (st_j + c - alpha)), to the task loss.
// Both the thresholds and the model parameters are trained by gradient
// descent. A small synthetic attention classifier stands in for a pretrained
// transformer.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "leopard/attention.hpp"
#include "leopard/error.hpp"
#include "leopard/matrix.hpp"

namespace leopard {

struct HyperParams {
  double s = 10.0;
  double c = 1000.0;
  double k = 100.0;
  double alpha = 1.0;
  double lambda = 3e-2;
  double lr_threshold = 1e-2;
  double lr_params = 3e-3;

  void validate() const {
    if (!(s > 0) || !(c > 0) || !(k > 0)) throw ConfigError("HyperParams: s, c and k must be positive");
    if (!(lambda >= 0)) throw ConfigError("HyperParams: lambda must be non-negative");
    if (!(lr_threshold >= 0) || !(lr_params >= 0)) throw ConfigError("HyperParams: negative learning rate");
  }
};

struct ThresholdParams {
  std::vector<double> th;

  static ThresholdParams zeros(std::size_t layers) { return {std::vector<double>(layers, 0.0)}; }
};

// ---------------------------------------------------------------------------
// Soft threshold and surrogate L0

inline double sech2(double u) noexcept {
  const double ch = std::cosh(u);
  return std::isinf(ch) ? 0.0 : 1.0 / (ch * ch);
}

inline double soft_threshold(double x, double th, const HyperParams& hp) noexcept {
  const double t = std::tanh(hp.s * (x - th));
  return x >= th ? x * t : hp.c * t;
}

struct SoftThresholdGrad {
  double d_dx = 0.0;
  double d_dth = 0.0;
};

/// Closed-form derivatives. At x == th the x >= th branch applies.
inline SoftThresholdGrad soft_threshold_grad(double x, double th, const HyperParams& hp) noexcept {
  const double u = hp.s * (x - th);
  const double sh = sech2(u);
  if (x >= th) return {std::tanh(u) + x * hp.s * sh, -x * hp.s * sh};
  return {hp.c * hp.s * sh, -hp.c * hp.s * sh};
}

inline double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// sigmoid'(z) = sigmoid(z) (1 - sigmoid(z)), without cancellation.
inline double sigmoid_prime(double z) noexcept {
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

inline double surrogate_l0(std::span<const double> scores, const HyperParams& hp) noexcept {
  double acc = 0.0;
  for (double v : scores) acc += sigmoid(hp.k * (v + hp.c - hp.alpha));
  return acc;
}

/// d surrogate_l0 / d score_j.
inline std::vector<double> surrogate_l0_grad(std::span<const double> scores, const HyperParams& hp) {
  std::vector<double> g(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) g[j] = hp.k * sigmoid_prime(hp.k * (scores[j] + hp.c - hp.alpha));
  return g;
}

/// Exact count of scores that survive (score > -c).
inline std::size_t l0_count(std::span<const double> scores, double c) noexcept {
  return static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [c](double v) { return v > -c; }));
}

/// task_loss + lambda * sum over layers of surrogate_l0(layer scores).
inline double total_loss(double task_loss, std::span<const std::vector<double>> layer_scores,
                         const HyperParams& hp) {
  if (!(hp.lambda >= 0)) throw ConfigError("total_loss: lambda must be non-negative");
  double reg = 0.0;
  for (const auto& layer : layer_scores) reg += surrogate_l0(layer, hp);
  return task_loss + hp.lambda * reg;
}

/// Gradient of total_loss w.r.t. every score, one vector per layer. The
/// derivative w.r.t. task_loss is 1.
inline std::vector<std::vector<double>> total_loss_grad(std::span<const std::vector<double>> layer_scores,
                                                        const HyperParams& hp) {
  std::vector<std::vector<double>> g;
  g.reserve(layer_scores.size());
  for (const auto& layer : layer_scores) {
    auto gl = surrogate_l0_grad(layer, hp);
    for (double& v : gl) v *= hp.lambda;
    g.push_back(std::move(gl));
  }
  return g;
}

/// Fraction of valid scores strictly below th; padded positions excluded.
inline double measure_sparsity(const ScoreMatrix& scores, double th) {
  const std::size_t n = scores.valid_length();
  if (n == 0) return 0.0;
  std::size_t pruned = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (scores(i, j) < th) ++pruned;
  return static_cast<double>(pruned) / static_cast<double>(n * n);
}

inline double measure_sparsity(std::span<const double> scores, double th) {
  if (scores.empty()) return 0.0;
  const auto pruned = std::count_if(scores.begin(), scores.end(), [th](double v) { return v < th; });
  return static_cast<double>(pruned) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Synthetic task

/// Each sequence holds noise tokens plus one signal token whose id is the
/// class. A fraction of labels is replaced at random so the loss has a floor.
struct ToyTaskConfig {
  int vocab = 32;
  int seq_len = 16;
  int classes = 4;
  int examples = 512;
  double label_noise = 0.1;
  std::uint64_t seed = 7;

  void validate() const {
    if (classes < 2 || vocab <= classes) throw ConfigError("ToyTaskConfig: need 2 <= classes < vocab");
    if (seq_len < 2 || seq_len > 32) throw ConfigError("ToyTaskConfig: seq_len must be in [2, 32]");
    if (vocab > 64) throw ConfigError("ToyTaskConfig: vocab must be <= 64");
    if (examples < 1) throw ConfigError("ToyTaskConfig: examples must be positive");
    if (label_noise < 0 || label_noise > 1) throw ConfigError("ToyTaskConfig: label_noise must be in [0, 1]");
  }
};

struct Example {
  std::vector<int> tokens;
  int label = 0;
};

inline std::vector<Example> make_toy_dataset(const ToyTaskConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> noise_tok(cfg.classes, cfg.vocab - 1);
  std::uniform_int_distribution<int> cls(0, cfg.classes - 1);
  std::uniform_int_distribution<int> pos(0, cfg.seq_len - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Example> data(static_cast<std::size_t>(cfg.examples));
  for (auto& ex : data) {
    ex.tokens.resize(static_cast<std::size_t>(cfg.seq_len));
    for (int& t : ex.tokens) t = noise_tok(rng);
    const int signal = cls(rng);
    ex.tokens[static_cast<std::size_t>(pos(rng))] = signal;
    ex.label = u01(rng) < cfg.label_noise ? cls(rng) : signal;
  }
  return data;
}

// ---------------------------------------------------------------------------
// Toy model: embedding -> attention layers -> mean pool -> linear classifier

struct AttentionLayerParams {
  Matrix wq, wk, wv;  ///< d x d each
};

struct ToyModel {
  Matrix embed;  ///< vocab x d
  std::vector<AttentionLayerParams> layers;
  Matrix wc;     ///< d x classes
  std::vector<double> bc;
  ThresholdParams thresholds;

  std::size_t dim() const noexcept { return embed.cols(); }
  std::size_t classes() const noexcept { return wc.cols(); }

  static ToyModel init(int vocab, int dim, int layers, int classes, std::uint64_t seed) {
    if (vocab < 1 || dim < 1 || dim > 16 || layers < 1 || classes < 2) {
      throw ConfigError("ToyModel: invalid shape (need dim in [1, 16], layers >= 1, classes >= 2)");
    }
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(dim);
    auto randn = [&](std::size_t r, std::size_t c, double sd) {
      std::normal_distribution<double> n(0.0, sd);
      Matrix m(r, c);
      for (double& v : m.data()) v = n(rng);
      return m;
    };
    ToyModel m;
    m.embed = randn(static_cast<std::size_t>(vocab), d, 1.0);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int l = 0; l < layers; ++l) m.layers.push_back({randn(d, d, sd), randn(d, d, sd), randn(d, d, sd)});
    m.wc = randn(d, static_cast<std::size_t>(classes), sd);
    m.bc.assign(static_cast<std::size_t>(classes), 0.0);
    m.thresholds = ThresholdParams::zeros(static_cast<std::size_t>(layers));
    return m;
  }
};

/// How scores are treated between Q K^T / sqrt(d) and softmax.
enum class PruneMode { kDense, kSoft, kHard };

struct LayerCache {
  Matrix input;   ///< s x d
  Matrix q, k, v;
  Matrix raw;     ///< scaled scores
  Matrix soft;    ///< after soft threshold (== raw when dense)
  Matrix probs;
  std::vector<std::uint8_t> pruned;  ///< hard mode only
};

struct ForwardResult {
  std::vector<LayerCache> layers;
  std::vector<double> pooled;
  std::vector<double> probs;  ///< class probabilities
  double task_loss = 0.0;
};

namespace detail {

inline Matrix gather_rows(const Matrix& table, const std::vector<int>& ids) {
  Matrix out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = table.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline void softmax_inplace_rows(Matrix& m, const std::vector<std::uint8_t>* pruned) {
  const std::size_t n = m.cols();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!pruned || !(*pruned)[i * n + j]) mx = std::max(mx, m(i, j));
    if (mx == -std::numeric_limits<double>::infinity()) {
      for (std::size_t j = 0; j < n; ++j) m(i, j) = (i == j) ? 1.0 : 0.0;
      continue;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool drop = pruned && (*pruned)[i * n + j];
      m(i, j) = drop ? 0.0 : std::exp(m(i, j) - mx);
      sum += m(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) m(i, j) /= sum;
  }
}

}  // namespace detail

inline ForwardResult forward(const ToyModel& model, const Example& ex, PruneMode mode, const HyperParams& hp) {
  ForwardResult r;
  Matrix h = detail::gather_rows(model.embed, ex.tokens);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.dim()));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& p = model.layers[l];
    const double th = model.thresholds.th[l];
    LayerCache c;
    c.input = h;
    c.q = matmul(h, p.wq);
    c.k = matmul(h, p.wk);
    c.v = matmul(h, p.wv);
    c.raw = matmul_bt(c.q, c.k);
    c.raw *= inv_sqrt_d;
    c.soft = c.raw;
    if (mode == PruneMode::kSoft) {
      for (double& x : c.soft.data()) x = soft_threshold(x, th, hp);
    } else if (mode == PruneMode::kHard) {
      c.pruned.resize(c.raw.data().size());
      for (std::size_t i = 0; i < c.pruned.size(); ++i) c.pruned[i] = c.raw.data()[i] < th ? 1 : 0;
    }
    c.probs = c.soft;
    detail::softmax_inplace_rows(c.probs, mode == PruneMode::kHard ? &c.pruned : nullptr);
    h = matmul(c.probs, c.v);
    r.layers.push_back(std::move(c));
  }
  const std::size_t d = model.dim();
  r.pooled.assign(d, 0.0);
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) r.pooled[j] += h(i, j) / static_cast<double>(h.rows());
  std::vector<double> logits(model.bc);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += r.pooled[j] * model.wc(j, c);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  r.probs.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) sum += (r.probs[c] = std::exp(logits[c] - mx));
  for (double& p : r.probs) p /= sum;
  r.task_loss = -std::log(std::max(r.probs[static_cast<std::size_t>(ex.label)], 1e-300));
  return r;
}

/// Per-example objective: task loss plus lambda times the surrogate count of
/// every layer's soft-thresholded scores. Zero regularizer when dense.
inline double example_total_loss(const ForwardResult& fr, PruneMode mode, const HyperParams& hp) {
  if (mode != PruneMode::kSoft) return fr.task_loss;
  std::vector<std::vector<double>> scores;
  for (const auto& c : fr.layers) scores.push_back(c.soft.data());
  return total_loss(fr.task_loss, scores, hp);
}

/// Gradient container with the same layout as ToyModel.
struct ModelGrad {
  Matrix embed;
  std::vector<AttentionLayerParams> layers;
  Matrix wc;
  std::vector<double> bc;
  std::vector<double> th;

  static ModelGrad zeros_like(const ToyModel& m) {
    ModelGrad g;
    g.embed = Matrix(m.embed.rows(), m.embed.cols());
    for (const auto& l : m.layers) {
      g.layers.push_back({Matrix(l.wq.rows(), l.wq.cols()), Matrix(l.wk.rows(), l.wk.cols()),
                          Matrix(l.wv.rows(), l.wv.cols())});
    }
    g.wc = Matrix(m.wc.rows(), m.wc.cols());
    g.bc.assign(m.bc.size(), 0.0);
    g.th.assign(m.thresholds.th.size(), 0.0);
    return g;
  }
};

/// Accumulates d example_total_loss / d parameters into `g`, scaled by `weight`.
inline void backward(const ToyModel& model, const Example& ex, const ForwardResult& fr, PruneMode mode,
                     const HyperParams& hp, double weight, ModelGrad& g) {
  const std::size_t d = model.dim();
  const std::size_t n = ex.tokens.size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> dlogits(fr.probs);
  dlogits[static_cast<std::size_t>(ex.label)] -= 1.0;
  for (double& v : dlogits) v *= weight;
  std::vector<double> dpooled(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t c = 0; c < dlogits.size(); ++c) {
      g.wc(j, c) += fr.pooled[j] * dlogits[c];
      dpooled[j] += model.wc(j, c) * dlogits[c];
    }
  }
  for (std::size_t c = 0; c < dlogits.size(); ++c) g.bc[c] += dlogits[c];

  Matrix dh(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) dh(i, j) = dpooled[j] / static_cast<double>(n);

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& p = model.layers[li];
    const auto& c = fr.layers[li];
    const double th = model.thresholds.th[li];
    // h_out = P V
    const Matrix dp = matmul_bt(dh, c.v);
    const Matrix dv = matmul_at(c.probs, dh);
    Matrix dsoft(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += c.probs(i, j) * dp(i, j);
      for (std::size_t j = 0; j < n; ++j) dsoft(i, j) = c.probs(i, j) * (dp(i, j) - dot);
    }
    Matrix draw(n, n);
    if (mode == PruneMode::kSoft) {
      for (std::size_t idx = 0; idx < dsoft.data().size(); ++idx) {
        const double st = c.soft.data()[idx];
        const double reg = weight * hp.lambda * hp.k * sigmoid_prime(hp.k * (st + hp.c - hp.alpha));
        const double up = dsoft.data()[idx] + reg;
        const auto sg = soft_threshold_grad(c.raw.data()[idx], th, hp);
        draw.data()[idx] = up * sg.d_dx;
        g.th[li] += up * sg.d_dth;
      }
    } else if (mode == PruneMode::kHard) {
      for (std::size_t idx = 0; idx < dsoft.data().size(); ++idx) draw.data()[idx] = c.pruned[idx] ? 0.0 : dsoft.data()[idx];
    } else {
      draw = dsoft;
    }
    draw *= inv_sqrt_d;
    const Matrix dq = matmul(draw, c.k);
    const Matrix dk = matmul_at(draw, c.q);
    g.layers[li].wq += matmul_at(c.input, dq);
    g.layers[li].wk += matmul_at(c.input, dk);
    g.layers[li].wv += matmul_at(c.input, dv);
    Matrix dx = matmul_bt(dq, p.wq);
    dx += matmul_bt(dk, p.wk);
    dx += matmul_bt(dv, p.wv);
    dh = std::move(dx);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto row = g.embed.row(static_cast<std::size_t>(ex.tokens[i]));
    for (std::size_t j = 0; j < d; ++j) row[j] += dh(i, j);
  }
}

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;             ///< mean total loss (task + regularizer)
  double normalized_loss = 1.0;  ///< loss / loss at epoch 0
  double task_loss = 0.0;
  double accuracy = 0.0;         ///< with hard pruning at the current thresholds
  double sparsity = 0.0;         ///< fraction of scores below th, all layers
  std::vector<double> thresholds;
};

struct TrainStats {
  std::vector<EpochStats> epochs;  ///< entry 0 is the evaluation before training
  friend bool operator==(const TrainStats& a, const TrainStats& b) {
    if (a.epochs.size() != b.epochs.size()) return false;
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
      const auto& x = a.epochs[i];
      const auto& y = b.epochs[i];
      if (x.epoch != y.epoch || x.loss != y.loss || x.task_loss != y.task_loss || x.sparsity != y.sparsity ||
          x.accuracy != y.accuracy || x.thresholds != y.thresholds) {
        return false;
      }
    }
    return true;
  }
};

struct TrainOptions {
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 1;
  /// Learning rates decay linearly to this fraction by the last epoch.
  double final_lr_fraction = 0.1;
  /// Per-step clip on |d loss / d th|; 0 disables.
  double threshold_grad_clip = 0.0;
};

/// Mean losses, hard-pruned accuracy and sparsity over a dataset.
inline EpochStats evaluate(const ToyModel& model, std::span<const Example> data, PruneMode train_mode,
                           const HyperParams& hp) {
  EpochStats st;
  std::size_t below = 0, total = 0, correct = 0;
  for (const auto& ex : data) {
    const auto fr = forward(model, ex, train_mode, hp);
    st.task_loss += fr.task_loss;
    st.loss += example_total_loss(fr, train_mode, hp);
    for (std::size_t l = 0; l < fr.layers.size(); ++l) {
      for (double x : fr.layers[l].raw.data()) below += x < model.thresholds.th[l] ? 1 : 0;
      total += fr.layers[l].raw.data().size();
    }
    const auto hard = forward(model, ex, PruneMode::kHard, hp);
    const auto pred = std::max_element(hard.probs.begin(), hard.probs.end()) - hard.probs.begin();
    correct += pred == ex.label ? 1 : 0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
  st.task_loss /= n;
  st.loss /= n;
  st.accuracy = static_cast<double>(correct) / n;
  st.sparsity = total == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(total);
  st.thresholds = model.thresholds.th;
  return st;
}

inline void apply_sgd(ToyModel& m, const ModelGrad& g, double lr_params, double lr_th, bool train_th) {
  auto upd = [lr_params](Matrix& w, const Matrix& dw) {
    for (std::size_t i = 0; i < w.data().size(); ++i) w.data()[i] -= lr_params * dw.data()[i];
  };
  upd(m.embed, g.embed);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    upd(m.layers[l].wq, g.layers[l].wq);
    upd(m.layers[l].wk, g.layers[l].wk);
    upd(m.layers[l].wv, g.layers[l].wv);
  }
  upd(m.wc, g.wc);
  for (std::size_t c = 0; c < m.bc.size(); ++c) m.bc[c] -= lr_params * g.bc[c];
  if (train_th) {
    for (std::size_t l = 0; l < m.thresholds.th.size(); ++l) m.thresholds.th[l] -= lr_th * g.th[l];
  }
}

namespace detail {

inline TrainStats run_sgd(ToyModel& model, std::span<const Example> data, const HyperParams& hp,
                          const TrainOptions& opt, PruneMode mode) {
  hp.validate();
  if (opt.epochs < 0 || opt.batch_size < 1) throw ConfigError("TrainOptions: invalid epochs or batch size");
  if (model.thresholds.th.size() != model.layers.size()) {
    throw ConfigError("ToyModel: need one threshold per attention layer");
  }
  TrainStats stats;
  stats.epochs.push_back(evaluate(model, data, mode, hp));
  const double loss0 = stats.epochs[0].loss;
  stats.epochs[0].normalized_loss = 1.0;
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int e = 1; e <= opt.epochs; ++e) {
    const double progress = opt.epochs > 1 ? static_cast<double>(e - 1) / static_cast<double>(opt.epochs - 1) : 0.0;
    const double lr_scale = 1.0 - (1.0 - opt.final_lr_fraction) * progress;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      const double w = 1.0 / static_cast<double>(end - start);
      ModelGrad g = ModelGrad::zeros_like(model);
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = data[order[b]];
        const auto fr = forward(model, ex, mode, hp);
        if (!std::isfinite(fr.task_loss)) throw TrainingError(e, "non-finite task loss");
        backward(model, ex, fr, mode, hp, w, g);
      }
      if (opt.threshold_grad_clip > 0) {
        for (double& v : g.th) v = std::clamp(v, -opt.threshold_grad_clip, opt.threshold_grad_clip);
      }
      apply_sgd(model, g, lr_scale * hp.lr_params, lr_scale * hp.lr_threshold, mode == PruneMode::kSoft);
    }
    EpochStats st = evaluate(model, data, mode, hp);
    st.epoch = e;
    if (!std::isfinite(st.loss)) throw TrainingError(e, "loss diverged");
    st.normalized_loss = loss0 > 0 ? st.loss / loss0 : 1.0;
    stats.epochs.push_back(std::move(st));
  }
  return stats;
}

}  // namespace detail

/// Dense training without thresholds; produces the starting point for
/// fine-tuning.
inline TrainStats pretrain_dense(ToyModel& model, std::span<const Example> data, const HyperParams& hp,
                                 const TrainOptions& opt) {
  return detail::run_sgd(model, data, hp, opt, PruneMode::kDense);
}

/// Joint fine-tuning of model parameters and per-layer thresholds with the
/// soft threshold in the forward pass and the surrogate L0 term in the loss.
/// Thresholds start at zero.
inline TrainStats fine_tune(ToyModel& model, std::span<const Example> data, const HyperParams& hp,
                            const TrainOptions& opt) {
  model.thresholds = ThresholdParams::zeros(model.layers.size());
  return detail::run_sgd(model, data, hp, opt, PruneMode::kSoft);
}

/// Full toy setup: dataset, model shape, dense pretraining and the fine-tuning
/// schedule shared by every lambda in the grid.
struct ToyRecipe {
  ToyTaskConfig task;
  std::size_t model_dim = 8;
  std::size_t layers = 1;
  std::uint64_t init_seed = 3;
  int pretrain_epochs = 100;
  double pretrain_lr = 0.1;
  TrainOptions fine_tune;
  std::vector<double> lambda_grid{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  /// A lambda is admissible when its final task loss stays within this factor
  /// of the lambda = 0 run.
  double loss_tolerance = 1.05;
};

inline ToyModel pretrained_toy_model(const ToyRecipe& r, std::span<const Example> data) {
  ToyModel m = ToyModel::init(r.task.vocab, r.model_dim, r.layers, r.task.classes, r.init_seed);
  HyperParams hp;
  hp.lr_params = r.pretrain_lr;
  TrainOptions opt;
  opt.epochs = r.pretrain_epochs;
  opt.batch_size = r.fine_tune.batch_size;
  opt.seed = r.fine_tune.seed;
  opt.final_lr_fraction = 1.0;
  pretrain_dense(m, data, hp, opt);
  return m;
}

struct LambdaRun {
  double lambda = 0.0;
  TrainStats stats;
  bool admissible = false;
};

struct LambdaSearch {
  TrainStats baseline;            ///< lambda = 0
  std::vector<LambdaRun> runs;    ///< one per grid entry, in grid order
  std::optional<std::size_t> chosen;
};

/// Fine-tunes a copy of `pretrained` for lambda = 0 and every grid entry, then
/// picks the admissible lambda with the highest final sparsity (ties go to the
/// smaller lambda). Admissible: final sparsity above the initial one and final
/// task loss within the recipe's tolerance of the baseline.
inline LambdaSearch lambda_grid_search(const ToyRecipe& r, const ToyModel& pretrained,
                                       std::span<const Example> data, HyperParams hp) {
  LambdaSearch out;
  hp.lambda = 0.0;
  {
    ToyModel m = pretrained;
    out.baseline = fine_tune(m, data, hp, r.fine_tune);
  }
  const double base_loss = out.baseline.epochs.back().task_loss;
  for (double lam : r.lambda_grid) {
    hp.lambda = lam;
    ToyModel m = pretrained;
    LambdaRun run{lam, fine_tune(m, data, hp, r.fine_tune), false};
    const auto& first = run.stats.epochs.front();
    const auto& last = run.stats.epochs.back();
    run.admissible = last.sparsity > first.sparsity && last.task_loss <= r.loss_tolerance * base_loss;
    if (run.admissible &&
        (!out.chosen || last.sparsity > out.runs[*out.chosen].stats.epochs.back().sparsity)) {
      out.chosen = out.runs.size();
    }
    out.runs.push_back(std::move(run));
  }
  return out;
}

}  // namespace leopard
