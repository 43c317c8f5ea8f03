// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "leopard/attention.hpp"
#include "support.hpp"

namespace {

using namespace leopard;

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(acc);
    }
  return out;
}

AttentionInput random_input(std::mt19937_64& rng, std::size_t s, std::size_t dw, std::size_t d, std::size_t h) {
  AttentionInput in;
  in.x = random_matrix(rng, s, dw);
  for (std::size_t i = 0; i < h; ++i) {
    in.heads.push_back({random_matrix(rng, dw, d, 0.5), random_matrix(rng, dw, d, 0.5), random_matrix(rng, dw, d, 0.5)});
  }
  in.wo = random_matrix(rng, d * h, dw, 0.5);
  return in;
}

TEST(ProjectQkv, IdentityWeights) {
  std::mt19937_64 rng(1);
  AttentionInput in;
  in.x = random_matrix(rng, 3, 4);
  in.heads.push_back({Matrix::identity(4), Matrix::identity(4), Matrix::identity(4)});
  in.wo = Matrix::identity(4);
  const auto qkv = project_qkv(in);
  ASSERT_EQ(qkv.size(), 1u);
  EXPECT_EQ(max_abs_diff(qkv[0].q, in.x), 0.0);
}

TEST(ProjectQkv, HandMultiplied) {
  AttentionInput in;
  in.x = Matrix(2, 2, {1, 2, 3, 4});
  in.heads.push_back({Matrix(2, 2, {0, 1, 1, 0}), Matrix(2, 2, {2, 0, 0, 2}), Matrix(2, 2, {1, 1, 0, 1})});
  in.wo = Matrix::identity(2);
  const auto qkv = project_qkv(in);
  EXPECT_EQ(qkv[0].q.data(), (std::vector<double>{2, 1, 4, 3}));
  EXPECT_EQ(qkv[0].k.data(), (std::vector<double>{2, 4, 6, 8}));
  EXPECT_EQ(qkv[0].v.data(), (std::vector<double>{1, 3, 3, 7}));
}

TEST(ProjectQkv, ZeroInput) {
  std::mt19937_64 rng(2);
  auto in = random_input(rng, 4, 6, 3, 2);
  in.x = Matrix(4, 6);
  for (const auto& t : project_qkv(in)) {
    for (double v : t.q.data()) EXPECT_EQ(v, 0.0);
    for (double v : t.v.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ProjectQkv, DimensionMismatch) {
  std::mt19937_64 rng(3);
  auto in = random_input(rng, 4, 6, 3, 2);
  in.heads[1].wk = Matrix(5, 3);
  EXPECT_THROW(project_qkv(in), DimensionError);
  in = random_input(rng, 4, 6, 3, 2);
  in.wo = Matrix(3, 6);
  EXPECT_THROW(project_qkv(in), DimensionError);
  in.heads.clear();
  EXPECT_THROW(project_qkv(in), DimensionError);
}

TEST(ComputeScores, OneHot) {
  Matrix q(1, 4);
  q(0, 2) = 1.0;
  const auto s = compute_scores(q, q, false);
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_FALSE(s.scaled());
}

TEST(ComputeScores, ScaledByInverseRootD) {
  std::mt19937_64 rng(4);
  const auto q = random_matrix(rng, 5, 64);
  const auto k = random_matrix(rng, 5, 64);
  const auto raw = compute_scores(q, k, false);
  const auto sc = compute_scores(q, k, true);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(sc(i, j), raw(i, j) * 0.125);
}

TEST(ComputeScores, MatchesTripleLoop) {
  std::mt19937_64 rng(5);
  const auto q = random_matrix(rng, 3, 4);
  const auto k = random_matrix(rng, 3, 4);
  const auto s = compute_scores(q, k, false);
  const auto ref = naive_matmul(q, k.transposed());
  EXPECT_LT(max_abs_diff(s.values(), ref), 1e-14);
}

TEST(ComputeScores, Errors) {
  EXPECT_THROW(compute_scores(Matrix(3, 4), Matrix(3, 5), false), DimensionError);
  EXPECT_THROW(compute_scores(Matrix(3, 4), Matrix(2, 4), false), DimensionError);
  Matrix bad(2, 2);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(compute_scores(bad, Matrix::identity(2), false), DimensionError);
}

TEST(Softmax, KnownRows) {
  const auto p = softmax_rows(ScoreMatrix(Matrix(2, 2, {0, 0, 1, -kInf}), false, 2));
  EXPECT_DOUBLE_EQ(p.probs(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.probs(0, 1), 0.5);
  EXPECT_EQ(p.probs(1, 0), 1.0);
  EXPECT_EQ(p.probs(1, 1), 0.0);
  EXPECT_TRUE(p.degenerate_rows.empty());

  const auto r = softmax_rows(ScoreMatrix(Matrix(3, 3, {1, 2, 3, 0, 0, 0, 0, 0, 0}), false, 3));
  EXPECT_NEAR(r.probs(0, 0), 0.0900, 1e-4);
  EXPECT_NEAR(r.probs(0, 1), 0.2447, 1e-4);
  EXPECT_NEAR(r.probs(0, 2), 0.6652, 1e-4);
}

TEST(Softmax, AllPrunedRowIsFlaggedDiagonal) {
  ScoreMatrix s(Matrix(3, 3, 1.0), false, 3);
  for (std::size_t j = 0; j < 3; ++j) s.prune(1, j);
  const auto p = softmax_rows(s);
  ASSERT_EQ(p.degenerate_rows, std::vector<std::size_t>{1});
  EXPECT_EQ(p.probs(1, 1), 1.0);
  EXPECT_EQ(p.probs(1, 0), 0.0);
}

TEST(Softmax, PaddingExcluded) {
  std::mt19937_64 rng(6);
  const auto p = softmax_rows(ScoreMatrix(random_matrix(rng, 5, 5), false, 3));
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (i >= 3 || j >= 3) EXPECT_EQ(p.probs(i, j), 0.0);
      sum += p.probs(i, j);
    }
    if (i < 3) EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int t = 0; t < 200; ++t) {
    Matrix m = random_matrix(rng, 8, 8, 5.0);
    const auto p = softmax_rows(ScoreMatrix(m, false, 8));
    Matrix shifted = m;
    for (std::size_t i = 0; i < 8; ++i) {
      const double c = shift(rng);
      for (std::size_t j = 0; j < 8; ++j) shifted(i, j) += c;
    }
    const auto ps = softmax_rows(ScoreMatrix(shifted, false, 8));
    for (std::size_t i = 0; i < 8; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_GE(p.probs(i, j), 0.0);
        sum += p.probs(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    EXPECT_LT(max_abs_diff(p.probs, ps.probs), 1e-9);
  }
}

TEST(Attend, IdentityAndOneHot) {
  std::mt19937_64 rng(8);
  const auto v = random_matrix(rng, 3, 4);
  EXPECT_EQ(max_abs_diff(attend(ProbMatrix{Matrix::identity(3), {}}, v), v), 0.0);
  Matrix p(3, 3);
  p(0, 2) = p(1, 2) = p(2, 0) = 1.0;
  const auto out = attend(ProbMatrix{p, {}}, v);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(out(0, c), v(2, c));
    EXPECT_EQ(out(2, c), v(0, c));
  }
  EXPECT_THROW(attend(ProbMatrix{Matrix(3, 2), {}}, v), DimensionError);
}

TEST(Attend, MatchesNaive) {
  std::mt19937_64 rng(9);
  const auto p = softmax_rows(ScoreMatrix(random_matrix(rng, 3, 3), false, 3));
  const auto v = random_matrix(rng, 3, 3);
  EXPECT_LT(max_abs_diff(attend(p, v), naive_matmul(p.probs, v)), 1e-14);
}

TEST(MultiHead, SingleHeadIdentityProjection) {
  std::mt19937_64 rng(10);
  auto in = random_input(rng, 5, 4, 4, 1);
  in.wo = Matrix::identity(4);
  const auto qkv = project_qkv(in);
  const auto ref = attend(softmax_rows(compute_scores(qkv[0].q, qkv[0].k, true)), qkv[0].v);
  EXPECT_LT(max_abs_diff(multi_head_attention(in), ref), 1e-14);
}

TEST(MultiHead, BlockIdentityKeepsConcatenation) {
  std::mt19937_64 rng(11);
  auto in = random_input(rng, 5, 6, 3, 2);
  in.wo = Matrix::identity(6);
  const auto qkv = project_qkv(in);
  const auto out = multi_head_attention(in);
  for (std::size_t h = 0; h < 2; ++h) {
    const auto a = attend(softmax_rows(compute_scores(qkv[h].q, qkv[h].k, true)), qkv[h].v);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(i, h * 3 + c), a(i, c), 1e-14);
  }
}

TEST(MultiHead, MatchesNaivePipeline) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto in = random_input(rng, 6, 5, 3, 2);
    Matrix concat(6, 6);
    for (std::size_t h = 0; h < 2; ++h) {
      const auto q = naive_matmul(in.x, in.heads[h].wq);
      const auto k = naive_matmul(in.x, in.heads[h].wk);
      const auto v = naive_matmul(in.x, in.heads[h].wv);
      const auto a = testutil::reference_pruned_attention(q, k, v, -kInf, 6);
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 3; ++c) concat(i, h * 3 + c) = a(i, c);
    }
    EXPECT_LT(max_abs_diff(multi_head_attention(in), naive_matmul(concat, in.wo)), 1e-12);
  }
}

TEST(IdealPruning, NegativeInfinityIsDense) {
  std::mt19937_64 rng(13);
  const auto q = random_matrix(rng, 7, 4);
  const auto k = random_matrix(rng, 7, 4);
  const auto v = random_matrix(rng, 7, 4);
  const auto r = ideal_pruned_attention(q, k, v, -kInf);
  EXPECT_EQ(r.pruned_count, 0u);
  EXPECT_EQ(r.pruning_rate, 0.0);
  EXPECT_LT(max_abs_diff(r.output, attend(softmax_rows(compute_scores(q, k, true)), v)), 1e-12);
}

TEST(IdealPruning, PositiveInfinityPrunesEverything) {
  std::mt19937_64 rng(14);
  const auto q = random_matrix(rng, 4, 4);
  const auto v = random_matrix(rng, 4, 4);
  const auto r = ideal_pruned_attention(q, q, v, kInf);
  EXPECT_EQ(r.pruning_rate, 1.0);
  EXPECT_EQ(r.degenerate_rows.size(), 4u);
  EXPECT_EQ(max_abs_diff(r.output, v), 0.0);
}

TEST(IdealPruning, WorkedExampleScoreIsPruned) {
  const auto ex = testutil::worked_example();
  Matrix q(1, 4), k(1, 4), v(1, 1, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    q(0, i) = dequantize(ex.q[i]);
    k(0, i) = dequantize(ex.k[i]);
  }
  const auto r = ideal_pruned_attention(q, k, v, 5.0, 1, false);
  EXPECT_EQ(r.pruned_count, 1u);
  EXPECT_EQ(ideal_pruned_attention(q, k, v, 1.5, 1, false).pruned_count, 0u);
}

TEST(IdealPruning, MasksNestAndRateExcludesPadding) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> th(-2, 2);
  for (int t = 0; t < 100; ++t) {
    const auto q = random_matrix(rng, 8, 4);
    const auto k = random_matrix(rng, 8, 4);
    const auto v = random_matrix(rng, 8, 4);
    double a = th(rng), b = th(rng);
    if (a > b) std::swap(a, b);
    const auto ra = ideal_pruned_attention(q, k, v, a, 6);
    const auto rb = ideal_pruned_attention(q, k, v, b, 6);
    for (std::size_t i = 0; i < ra.mask.size(); ++i) {
      if (ra.mask[i]) EXPECT_TRUE(rb.mask[i]);
      if (i / 8 >= 6 || i % 8 >= 6) EXPECT_EQ(ra.mask[i], 0);
    }
    EXPECT_DOUBLE_EQ(ra.pruning_rate, static_cast<double>(ra.pruned_count) / 36.0);
    EXPECT_LT(max_abs_diff(ra.output, testutil::reference_pruned_attention(q, k, v, a, 6)), 1e-12);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(ra.output(7, c), 0.0);
  }
}

}  // namespace
