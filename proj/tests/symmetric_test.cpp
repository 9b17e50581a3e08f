#include <gtest/gtest.h>

#include "openmap/random.hpp"
#include "openmap/symmetric.hpp"

using namespace openmap;

namespace {

Matrix sym_noise(int n, double size, Rng& rng) {
  Matrix e = gaussian_matrix(n, n, rng);
  e = (0.5 * (e + e.transpose())).eval();
  return e * (size / e.norm());
}

}  // namespace

TEST(SolveP, ZeroRightHandSide) {
  Vector s(3);
  s << 1.0, 0.5, 2.0;
  SymSolveResult r = solve_p(s, Matrix::Zero(3, 3));
  EXPECT_EQ(max_abs(r.P), 0.0);
}

TEST(SolveP, ScalarQuadratic) {
  Vector s(1);
  s << 1.0;
  Matrix r(1, 1);
  r << 0.21;
  // 2P + P^2 = 0.21 has the root sqrt(1.21) - 1.
  EXPECT_NEAR(solve_p(s, r).P(0, 0), 0.1, 1e-15);
}

TEST(SolveP, RandomSmallRightHandSide) {
  Rng rng(21);
  Vector s = uniform_matrix(4, 1, 0.5, 2.0, rng).col(0);
  Matrix r = sym_noise(4, 1.0, rng);
  r *= 1e-6 / max_abs(r);
  SymSolveResult out = solve_p(s, r);
  EXPECT_LE(out.max_equation_residual, 1e-12);
  EXPECT_LE(out.p_inf_norm, 3e-6);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < i; ++j) EXPECT_EQ(out.P(i, j), 0.0);
}

TEST(SolveP, RefusesLargeRightHandSide) {
  Vector s(2);
  s << 1.0, 1.0;
  Matrix r = Matrix::Identity(2, 2) * -2.0;
  try {
    solve_p(s, r);
    FAIL() << "expected a refusal";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DeltaTooLarge);
    EXPECT_TRUE(e.delta0().has_value());
  }
}

TEST(SolveP, RejectsBadInput) {
  Vector s(2);
  s << 1.0, -1.0;
  EXPECT_THROW(solve_p(s, Matrix::Zero(2, 2)), Error);
  s << 1.0, 1.0;
  Matrix r = Matrix::Zero(2, 2);
  r(0, 1) = 1e-3;
  EXPECT_THROW(solve_p(s, r), Error);
}

TEST(SymRealize, IdentityFactor) {
  Rng rng(4);
  Matrix r = sym_noise(2, 1e-6, rng);
  Matrix target = Matrix::Identity(2, 2) + r;
  SymRealizationWitness w = sym_realize(Matrix::Identity(2, 2), target);
  EXPECT_LE(w.residual, 1e-12);
  EXPECT_LE(w.a_norm, 1e-5);
  ASSERT_TRUE(w.bound.has_value());
  EXPECT_LE(w.a_norm, *w.bound);
}

TEST(SymRealize, RankOneFactor) {
  Matrix w(2, 1);
  w << 1, 1;
  Rng rng(8);
  Matrix e = gaussian_matrix(2, 1, rng);
  e *= 1e-5 / e.norm();
  Matrix target = (w + e) * (w + e).transpose();
  SymRealizationWitness out = sym_realize(w, target);
  EXPECT_LE(out.residual, 1e-10);
  ASSERT_TRUE(out.bound.has_value());
  EXPECT_LE(out.a_norm, *out.bound);
  Matrix b = w + out.A_eps;
  EXPECT_LE((b * b.transpose() - target).norm(), 1e-10);
}

TEST(SymRealize, RankDeficientFactorWithRoom) {
  Rng rng(15);
  Matrix w = gaussian_matrix(3, 1, rng) * gaussian_matrix(1, 2, rng);  // rank 1, k = 2
  const Matrix g = gaussian_matrix(3, 1, rng);
  // Adding a rank-one PSD term keeps the target inside rank <= k.
  const Matrix target = w * w.transpose() + 1e-6 * g * g.transpose();
  SymRealizationWitness out = sym_realize(w, target);
  EXPECT_LE(out.residual, 1e-10);
  EXPECT_LE(out.a_norm, 1e-2);
}

TEST(SymRealize, Refusals) {
  Matrix w(2, 1);
  w << 1, 0;
  try {
    sym_realize(w, Matrix::Identity(2, 2));
    FAIL() << "rank-2 target from a one-column factor";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankInfeasible);
  }
  Matrix neg = w * w.transpose();
  neg(1, 1) = -1e-3;
  try {
    sym_realize(w, neg);
    FAIL() << "indefinite target";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotPSD);
  }
}

TEST(Certify, Universal) {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) EXPECT_TRUE(certify_bm_transfer(gaussian_matrix(3, 2, rng)).open);
}

TEST(Certify, ZeroFactorDegrades) {
  BmCertificate c = certify_bm_transfer(Matrix::Zero(3, 2));
  EXPECT_TRUE(c.open);
  EXPECT_TRUE(c.degenerate_bound);
  EXPECT_FALSE(c.sigma_min.has_value());
}

TEST(Certify, BoundCoefficient) {
  Matrix w(3, 2);
  w << 2, 0, 0, 1, 0, 0;
  BmCertificate c = certify_bm_transfer(w);
  ASSERT_TRUE(c.bound_coefficient.has_value());
  EXPECT_EQ(c.rank, 2);
  EXPECT_NEAR(*c.sigma_min, 1.0, 1e-14);
  const double expected = 3.0 * std::pow(2.0, 2.5) + std::sqrt(4.0) + 1.0;
  EXPECT_NEAR(*c.bound_coefficient, expected, 1e-12);
  EXPECT_NEAR(*c.delta0, 0.5, 1e-14);
}
