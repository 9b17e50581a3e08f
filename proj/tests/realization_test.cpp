#include <gtest/gtest.h>

#include "openmap/realization.hpp"

using namespace openmap;

namespace {

Matrix mat(int r, int c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

// Independent check: (W1 + ΔW1)(W2 + ΔW2) against the target.
double product_residual(const FactorPair& p, const RealizationWitness& w, const Matrix& target) {
  return ((p.w1 + w.delta_w1) * (p.w2 + w.delta_w2) - target).norm();
}

}  // namespace

TEST(Realize, SameProductNeedsNoChange) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  RealizationWitness w = realize(p, p.product());
  EXPECT_EQ(w.delta_w1.norm(), 0.0);
  EXPECT_EQ(w.delta_w2.norm(), 0.0);
}

TEST(Realize, InvertibleLeftFactor) {
  FactorPair p(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  Matrix r = mat(2, 2, {1, -2, 0.5, 3});
  r *= 1e-6 / r.norm();
  Matrix target = Matrix::Identity(2, 2) + r;
  RealizationWitness w = realize(p, target);
  EXPECT_EQ(w.regime, Regime::FullRank);
  EXPECT_LE(w.delta_w1.norm(), 1e-15);
  EXPECT_LE((w.delta_w2 - r).norm(), 1e-15);
  EXPECT_LE(product_residual(p, w, target), 1e-15);
}

TEST(Realize, RankOnePairScalesWithDelta) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  std::vector<double> ratios;
  for (double delta : {1e-3, 1e-5, 1e-7, 1e-9}) {
    Rng rng(derive_seed(12345, static_cast<std::uint64_t>(-std::log10(delta))));
    Matrix target = sample_feasible_target(p.product(), 1, delta, rng);
    RealizationWitness w = realize(p, target);
    EXPECT_LE(w.target_residual, 1e-10);
    EXPECT_LE(product_residual(p, w, target), 1e-10);
    ratios.push_back(w.delta_norm / delta);
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  EXPECT_LT(*hi / *lo, 10.0);
  EXPECT_LT(*hi, 10.0);
}

TEST(Realize, GenericRankDeficientPairs) {
  Tolerances tol;
  for (int t = 0; t < 5; ++t) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(t)));
    FactorPair p(gaussian_matrix(5, 2, rng), gaussian_matrix(2, 4, rng));
    ASSERT_TRUE(check_openness(p).open);
    for (double delta : {1e-4, 1e-8}) {
      Matrix target = sample_feasible_target(p.product(), 2, delta, rng);
      RealizationWitness w = realize(p, target, tol);
      EXPECT_LE(product_residual(p, w, target), 1e-10);
      EXPECT_LT(w.delta_norm / delta, 1e3);
    }
  }
}

TEST(Realize, NonOpenPointRefuses) {
  FactorPair p(mat(2, 1, {1, 1}), mat(1, 2, {0, 0}));
  Matrix target = Matrix::Zero(2, 2);
  target(0, 0) = 1e-6;
  EXPECT_FALSE(check_openness(p).open);
  try {
    realize(p, target);
    FAIL() << "expected a refusal";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotOpen);
  }
}

TEST(Realize, RejectsInfeasibleRank) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  try {
    realize(p, Matrix::Identity(2, 2));
    FAIL() << "expected RankInfeasible";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankInfeasible);
  }
}

TEST(Realize, RejectsWrongShape) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  EXPECT_THROW(realize(p, Matrix::Zero(3, 2)), Error);
}

TEST(RatioSweep, InvertibleCaseMatchesInverseNorm) {
  Matrix w1 = mat(2, 2, {2, 1, 0, 1});
  FactorPair p(w1, Matrix::Identity(2, 2));
  const double inv_norm = w1.inverse().norm();
  auto table = measure_delta_ratio(p, {1e-3, 1e-6}, 5);
  for (const auto& row : table) {
    EXPECT_EQ(row.failures, 0);
    EXPECT_LE(row.max_ratio, inv_norm * (1.0 + 1e-6));
    EXPECT_GT(row.max_ratio, 0.0);
  }
}

TEST(RatioSweep, BoundedAcrossScales) {
  FactorPair p(mat(2, 1, {1, 2}), mat(1, 2, {1, 1}));
  auto table = measure_delta_ratio(p, {1e-3, 1e-5, 1e-7}, 4);
  double lo = 1e300, hi = 0;
  for (const auto& row : table) {
    EXPECT_EQ(row.failures, 0);
    lo = std::min(lo, row.max_ratio);
    hi = std::max(hi, row.max_ratio);
  }
  EXPECT_LT(hi / lo, 10.0);
}
