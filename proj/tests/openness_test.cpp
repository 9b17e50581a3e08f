#include <gtest/gtest.h>

#include "openmap/openness.hpp"

using namespace openmap;

namespace {

Matrix mat(int r, int c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

void expect_witnesses_valid(const FactorPair& p, const Witnesses& w) {
  const Tolerances tol;
  if (w.w1_tilde) {
    EXPECT_LE(max_abs(*w.w1_tilde * p.w2), tol.residual_abs);
    const Matrix s = p.w1 + *w.w1_tilde;
    EXPECT_EQ(rank(s), std::min(s.rows(), s.cols()));
  }
  if (w.w2_tilde) {
    EXPECT_LE(max_abs(p.w1 * *w.w2_tilde), tol.residual_abs);
    const Matrix s = p.w2 + *w.w2_tilde;
    EXPECT_EQ(rank(s), std::min(s.rows(), s.cols()));
  }
}

}  // namespace

TEST(CheckOpenness, RankOnePairIsOpen) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  OpennessReport r = check_openness(p);
  EXPECT_EQ(r.regime, Regime::RankDeficient);
  EXPECT_EQ(r.rank_w1, 1);
  EXPECT_EQ(r.rank_w2, 1);
  EXPECT_EQ(r.intersection_dim_value, 0);
  EXPECT_TRUE(r.open);
}

TEST(CheckOpenness, UnequalRanksAreNotOpen) {
  OpennessReport r = check_openness(FactorPair(mat(2, 1, {1, 1}), mat(1, 2, {0, 0})));
  EXPECT_FALSE(r.open);
  EXPECT_FALSE(r.condition_flags.at("ranks_equal"));
}

TEST(CheckOpenness, ZeroPointIsOpen) {
  FactorPair p(Matrix::Zero(3, 2), Matrix::Zero(2, 3));
  OpennessReport r = check_openness(p);
  EXPECT_TRUE(r.open);
  EXPECT_EQ(r.intersection_dim_value, 0);
  Witnesses w = construct_witnesses(p);
  ASSERT_TRUE(w.w1_tilde && w.w2_tilde);
  expect_witnesses_valid(p, w);
}

TEST(CheckOpenness, FullRankRegimeClause) {
  FactorPair p(mat(1, 2, {1, 0}), mat(2, 1, {0, 0}));
  OpennessReport r = check_openness(p);
  EXPECT_EQ(r.regime, Regime::FullRank);
  EXPECT_TRUE(r.open);
  EXPECT_TRUE(r.condition_flags.at("stmt2_b"));
  Witnesses w = construct_witnesses(p);
  ASSERT_TRUE(w.w2_tilde.has_value());
  // The only admissible direction is e2.
  EXPECT_EQ((*w.w2_tilde)(0, 0), 0.0);
  EXPECT_NE((*w.w2_tilde)(1, 0), 0.0);
  expect_witnesses_valid(p, w);
}

TEST(CheckOpenness, RankDeficientWitnesses) {
  FactorPair p(mat(3, 2, {1, 0, 0, 0, 0, 0}), mat(2, 3, {1, 0, 0, 0, 0, 0}));
  OpennessReport r = check_openness(p);
  ASSERT_TRUE(r.open);
  Witnesses w = construct_witnesses(p);
  ASSERT_TRUE(w.w1_tilde && w.w2_tilde);
  expect_witnesses_valid(p, w);
  // W1 W̃2 = 0 forces the first row of W̃2 to vanish; the filled row is the second.
  EXPECT_EQ(max_abs(w.w2_tilde->row(0)), 0.0);
  EXPECT_GT(max_abs(w.w2_tilde->row(1)), 0.0);
}

TEST(CheckOpenness, IntersectionBlocksOpenness) {
  // N(W1) = span(e2) = C(W2).
  FactorPair p(mat(2, 2, {1, 0, 0, 0}), mat(2, 2, {0, 0, 1, 0}));
  OpennessReport r = check_openness(p);
  EXPECT_EQ(r.intersection_dim_value, 1);
  EXPECT_FALSE(r.open);
  EXPECT_THROW(construct_witnesses(p), Error);
}

TEST(CheckOpenness, AmbiguousRankIsFlagged) {
  FactorPair p(mat(2, 2, {1, 0, 0, 1e-14}), Matrix::Identity(2, 2));
  try {
    check_openness(p);
    FAIL() << "expected IllConditioned";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IllConditioned);
  }
}

TEST(CheckOpenness, ShapeMismatch) { EXPECT_THROW(FactorPair(Matrix::Zero(2, 2), Matrix::Zero(3, 2)), Error); }

TEST(Probe, OpenPointRecovers) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  OpennessProbeReport r = probe_openness(p, 1e-6, 20);
  EXPECT_EQ(r.success_fraction, 1.0);
  EXPECT_LE(r.max_factor_norm, 100.0 * 1e-6);
}

TEST(Probe, NonOpenPointFails) {
  FactorPair p(mat(2, 1, {1, 1}), mat(1, 2, {0, 0}));
  OpennessProbeReport r = probe_openness(p, 1e-4, 20);
  EXPECT_LT(r.success_fraction, 1.0);
}

TEST(Probe, ZeroDeltaIsTrivial) {
  FactorPair p(mat(2, 1, {1, 1}), mat(1, 2, {0, 0}));
  OpennessProbeReport r = probe_openness(p, 0.0, 5);
  EXPECT_EQ(r.success_fraction, 1.0);
  EXPECT_EQ(r.successes, 5);
}

TEST(Probe, FeasibleTargetsRespectRankAndDistance) {
  Rng rng(9);
  Matrix z = mat(2, 2, {1, 1, 2, 2});
  for (double delta : {1e-2, 1e-5}) {
    Matrix t = sample_feasible_target(z, 1, delta, rng);
    EXPECT_EQ(rank(t), 1);
    EXPECT_NEAR((t - z).norm(), delta, 1e-9 * delta + 1e-15);
  }
}

TEST(Probe, Deterministic) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  OpennessProbeReport a = probe_openness(p, 1e-5, 5), b = probe_openness(p, 1e-5, 5);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].factor_norm, b.records[i].factor_norm);
}
