// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Real-valued reference attention and the ideal pruning oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "leopard/error.hpp"
#include "leopard/matrix.hpp"

namespace leopard {

struct HeadWeights {
  Matrix wq;  ///< d_w x d
  Matrix wk;  ///< d_w x d
  Matrix wv;  ///< d_w x d
};

struct AttentionInput {
  Matrix x;                  ///< s x d_w token embeddings
  std::vector<HeadWeights> heads;
  Matrix wo;                 ///< (d * h) x d_w

  std::size_t seq_len() const noexcept { return x.rows(); }
  std::size_t model_dim() const noexcept { return x.cols(); }
  std::size_t head_count() const noexcept { return heads.size(); }
  std::size_t head_dim() const noexcept { return heads.empty() ? 0 : heads.front().wq.cols(); }

  void validate() const {
    if (heads.empty()) throw DimensionError("AttentionInput: need at least one head");
    const std::size_t dw = model_dim();
    const std::size_t d = head_dim();
    for (std::size_t h = 0; h < heads.size(); ++h) {
      for (const Matrix* w : {&heads[h].wq, &heads[h].wk, &heads[h].wv}) {
        if (w->rows() != dw || w->cols() != d) {
          throw DimensionError("AttentionInput: head " + std::to_string(h) + " projection is " +
                               std::to_string(w->rows()) + "x" + std::to_string(w->cols()) +
                               ", expected " + std::to_string(dw) + "x" + std::to_string(d));
        }
      }
    }
    if (wo.rows() != d * heads.size() || wo.cols() != dw) {
      throw DimensionError("AttentionInput: output projection must be (d*h) x d_w");
    }
  }
};

struct QkvTriple {
  Matrix q;
  Matrix k;
  Matrix v;
};

inline std::vector<QkvTriple> project_qkv(const AttentionInput& in) {
  in.validate();
  std::vector<QkvTriple> out;
  out.reserve(in.head_count());
  for (const auto& h : in.heads) out.push_back({matmul(in.x, h.wq), matmul(in.x, h.wk), matmul(in.x, h.wv)});
  return out;
}

/// Pre-softmax scores. Pruned entries carry an explicit tag rather than a
/// large negative number, so softmax can drop them exactly.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(Matrix scores, bool scaled, std::size_t valid_length)
      : scores_(std::move(scores)),
        pruned_(scores_.rows() * scores_.cols(), 0),
        scaled_(scaled),
        valid_length_(valid_length) {
    if (scores_.rows() != scores_.cols()) throw DimensionError("ScoreMatrix: scores must be square");
    if (valid_length_ > scores_.rows()) throw DimensionError("ScoreMatrix: valid_length exceeds s");
    for (double& v : scores_.data()) {
      if (std::isnan(v)) throw DimensionError("ScoreMatrix: NaN score");
    }
  }

  std::size_t size() const noexcept { return scores_.rows(); }
  std::size_t valid_length() const noexcept { return valid_length_; }
  bool scaled() const noexcept { return scaled_; }
  double operator()(std::size_t i, std::size_t j) const { return scores_(i, j); }
  const Matrix& values() const noexcept { return scores_; }

  /// Pruned, or carries a -inf score.
  bool is_pruned(std::size_t i, std::size_t j) const {
    return pruned_[i * size() + j] != 0 || scores_(i, j) == -std::numeric_limits<double>::infinity();
  }
  void prune(std::size_t i, std::size_t j) { pruned_[i * size() + j] = 1; }
  bool is_padding(std::size_t i, std::size_t j) const noexcept {
    return i >= valid_length_ || j >= valid_length_;
  }

 private:
  Matrix scores_;
  std::vector<std::uint8_t> pruned_;
  bool scaled_ = false;
  std::size_t valid_length_ = 0;
};

inline ScoreMatrix compute_scores(const Matrix& q, const Matrix& k, bool scale, std::size_t valid_length) {
  if (q.cols() != k.cols()) throw DimensionError("compute_scores: Q and K widths differ");
  if (q.rows() != k.rows()) throw DimensionError("compute_scores: Q and K lengths differ");
  Matrix s = matmul_bt(q, k);
  if (scale && q.cols() > 0) s *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return ScoreMatrix(std::move(s), scale, valid_length);
}

inline ScoreMatrix compute_scores(const Matrix& q, const Matrix& k, bool scale) {
  return compute_scores(q, k, scale, q.rows());
}

struct ProbMatrix {
  Matrix probs;
  /// Valid rows whose every score was pruned; each gets probability 1 on its
  /// own diagonal entry.
  std::vector<std::size_t> degenerate_rows;
};

/// Row softmax with max subtraction. Pruned and padded entries get 0;
/// padded rows are all zero.
inline ProbMatrix softmax_rows(const ScoreMatrix& scores) {
  const std::size_t n = scores.size();
  const std::size_t valid = scores.valid_length();
  ProbMatrix out{Matrix(n, n), {}};
  for (std::size_t i = 0; i < valid; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < valid; ++j) {
      if (!scores.is_pruned(i, j)) mx = std::max(mx, scores(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      out.probs(i, i) = 1.0;
      out.degenerate_rows.push_back(i);
      continue;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
      if (scores.is_pruned(i, j)) continue;
      const double e = std::exp(scores(i, j) - mx);
      out.probs(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < valid; ++j) out.probs(i, j) /= sum;
  }
  return out;
}

inline Matrix attend(const ProbMatrix& p, const Matrix& v) {
  if (p.probs.cols() != v.rows()) throw DimensionError("attend: P columns must match V rows");
  return matmul(p.probs, v);
}

/// Per-head softmax attention, concatenated along features and projected by
/// WO.
inline Matrix multi_head_attention(const AttentionInput& in, bool scale = true) {
  const auto qkv = project_qkv(in);
  const std::size_t s = in.seq_len();
  const std::size_t d = in.head_dim();
  Matrix concat(s, d * in.head_count());
  for (std::size_t h = 0; h < qkv.size(); ++h) {
    const Matrix att = attend(softmax_rows(compute_scores(qkv[h].q, qkv[h].k, scale)), qkv[h].v);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t c = 0; c < d; ++c) concat(i, h * d + c) = att(i, c);
  }
  return matmul(concat, in.wo);
}

struct PrunedAttention {
  Matrix output;
  std::vector<std::uint8_t> mask;  ///< s*s row-major, 1 = pruned
  std::size_t pruned_count = 0;
  double pruning_rate = 0.0;       ///< over valid (non-padded) scores only
  std::vector<std::size_t> degenerate_rows;
};

/// Scores (scaled by 1/sqrt(d) when `scale`) below `th` are removed before
/// softmax.
inline PrunedAttention ideal_pruned_attention(const Matrix& q, const Matrix& k, const Matrix& v, double th,
                                              std::size_t valid_length, bool scale = true) {
  if (v.rows() != k.rows()) throw DimensionError("ideal_pruned_attention: V rows must match K rows");
  ScoreMatrix scores = compute_scores(q, k, scale, valid_length);
  const std::size_t n = scores.size();
  PrunedAttention out;
  out.mask.assign(n * n, 0);
  for (std::size_t i = 0; i < valid_length; ++i) {
    for (std::size_t j = 0; j < valid_length; ++j) {
      if (scores(i, j) < th) {
        scores.prune(i, j);
        out.mask[i * n + j] = 1;
        ++out.pruned_count;
      }
    }
  }
  const std::size_t total = valid_length * valid_length;
  out.pruning_rate = total == 0 ? 0.0 : static_cast<double>(out.pruned_count) / static_cast<double>(total);
  ProbMatrix p = softmax_rows(scores);
  out.degenerate_rows = p.degenerate_rows;
  out.output = attend(p, v);
  return out;
}

inline PrunedAttention ideal_pruned_attention(const Matrix& q, const Matrix& k, const Matrix& v, double th) {
  return ideal_pruned_attention(q, k, v, th, q.rows());
}

}  // namespace leopard
