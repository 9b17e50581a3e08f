#include <gtest/gtest.h>

#include "openmap/landscape.hpp"
#include "openmap/random.hpp"
#include "openmap/symmetric.hpp"

using namespace openmap;

namespace {

Matrix mat(int r, int c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

NetworkPoint random_point(const std::vector<int>& dims, int n, Rng& rng) {
  NetworkPoint pt;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) pt.weights.push_back(gaussian_matrix(dims[k], dims[k + 1], rng));
  pt.X = gaussian_matrix(dims.back(), n, rng);
  pt.Y = gaussian_matrix(dims.front(), n, rng);
  return pt;
}

NetworkPoint zero_point(const std::vector<int>& dims, const Matrix& x, const Matrix& y) {
  NetworkPoint pt;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) pt.weights.push_back(Matrix::Zero(dims[k], dims[k + 1]));
  pt.X = x;
  pt.Y = y;
  return pt;
}

std::vector<Matrix> finite_difference_gradient(const NetworkPoint& pt, double step) {
  std::vector<Matrix> fd;
  for (std::size_t l = 0; l < pt.weights.size(); ++l) {
    fd.push_back(Matrix::Zero(pt.weights[l].rows(), pt.weights[l].cols()));
    for (Eigen::Index a = 0; a < pt.weights[l].size(); ++a) {
      NetworkPoint p1 = pt, p2 = pt;
      p1.weights[l](a) += step;
      p2.weights[l](a) -= step;
      fd[l](a) = (objective(p1) - objective(p2)) / (2.0 * step);
    }
  }
  return fd;
}

}  // namespace

TEST(Objective, ZeroWeightsZeroTargets) {
  NetworkPoint pt = zero_point({2, 3, 2}, Matrix::Identity(2, 2), Matrix::Zero(2, 2));
  EXPECT_EQ(objective(pt), 0.0);
  EXPECT_EQ(tuple_norm(gradient(pt)), 0.0);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (const std::vector<int>& dims :
       {std::vector<int>{2, 3}, std::vector<int>{3, 2, 4}, std::vector<int>{2, 3, 1, 2}, std::vector<int>{1, 2, 3, 2, 2}}) {
    NetworkPoint pt = random_point(dims, 3, rng);
    auto g = gradient(pt);
    auto fd = finite_difference_gradient(pt, 1e-6);
    double num = 0, den = 0;
    for (std::size_t l = 0; l < g.size(); ++l) {
      num += (g[l] - fd[l]).squaredNorm();
      den += g[l].squaredNorm();
    }
    EXPECT_LE(std::sqrt(num / den), 1e-6);
  }
}

TEST(Objective, PluginLossGradient) {
  Rng rng(4);
  NetworkPoint pt = random_point({2, 2, 3}, 2, rng);
  NetworkSpec spec = spec_of(pt);
  // Smooth convex loss: sum of log cosh of the residual.
  const Matrix y = pt.Y;
  spec.loss = LossKind::ConvexPlugin;
  spec.plugin.value = [y](const Matrix& out) { return (out - y).array().cosh().log().sum(); };
  spec.plugin.gradient = [y](const Matrix& out) { return Matrix((out - y).array().tanh()); };
  auto g = gradient(pt, spec);
  const double step = 1e-6;
  for (std::size_t l = 0; l < g.size(); ++l)
    for (Eigen::Index a = 0; a < g[l].size(); ++a) {
      NetworkPoint p1 = pt, p2 = pt;
      p1.weights[l](a) += step;
      p2.weights[l](a) -= step;
      EXPECT_NEAR(g[l](a), (objective(p1, spec) - objective(p2, spec)) / (2 * step), 1e-7);
    }
  EXPECT_TRUE(std::isnan(global_value(spec, pt.X, pt.Y)));
}

TEST(GlobalValue, ReachableTarget) {
  Rng rng(5);
  Matrix x = gaussian_matrix(3, 4, rng);
  Matrix y = gaussian_matrix(2, 1, rng) * gaussian_matrix(1, 3, rng) * x;
  NetworkSpec spec{{2, 1, 3}, 4};
  EXPECT_LE(global_value(spec, x, y), 1e-12);
}

TEST(GlobalValue, TruncationAndResidualTerm) {
  // Independent computation through the normal equations and an eigen-truncation.
  Rng rng(6);
  Matrix x = gaussian_matrix(2, 4, rng);
  Matrix y = gaussian_matrix(3, 4, rng);
  NetworkSpec spec{{3, 1, 2}, 4};
  const Matrix z_ls = y * x.transpose() * (x * x.transpose()).inverse();
  const Matrix p = x.transpose() * (x * x.transpose()).inverse() * x;  // projector onto the row space of X
  const Matrix yp = y * p;
  SymEigen e = sym_eigen_desc(yp * yp.transpose());
  const double best = 0.5 * (y.squaredNorm() - e.values(0));
  EXPECT_NEAR(global_value(spec, x, y), best, 1e-10);
  (void)z_ls;
}

TEST(GlobalValue, IntroAndAppendixFixtures) {
  Counterexample a = intro_fixture();
  EXPECT_EQ(global_value(spec_of(a.point), a.X, a.Y), 0.0);
  Counterexample b = rank_deficient_y_fixture();
  EXPECT_LE(std::abs(global_value(spec_of(b.point), b.X, b.Y)), 1e-12);
}

TEST(Fixture, IntroPointValues) {
  Counterexample ce = intro_fixture();
  EXPECT_EQ(ce.point.layer(3), mat(2, 1, {1, 0}));
  EXPECT_EQ(ce.point.layer(2), mat(1, 1, {0}));
  EXPECT_EQ(ce.point.layer(1), mat(1, 2, {1, 0}));
  EXPECT_EQ(ce.Y, mat(2, 2, {0, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(objective(ce.point), 0.5);
  EXPECT_EQ(tuple_norm(gradient(ce.point)), 0.0);
}

// Along W3 = [1; e], W2 = e^2, W1 = [1 e] the loss is (1 - e^4 + 2e^6 + e^8)/2,
// strictly below 1/2 for small e, so the intro point is not a local minimum.
TEST(Fixture, IntroPointHasFourthOrderDescent) {
  Counterexample ce = intro_fixture();
  for (double e : {1e-1, 3e-2, 1e-2}) {
    NetworkPoint pt = ce.point;
    pt.layer(3) = mat(2, 1, {1, e});
    pt.layer(2) = mat(1, 1, {e * e});
    pt.layer(1) = mat(1, 2, {1, e});
    const double expected = 0.5 * (1 - std::pow(e, 4) + 2 * std::pow(e, 6) + std::pow(e, 8));
    EXPECT_NEAR(objective(pt), expected, 1e-15);
    EXPECT_LT(objective(pt), 0.5);
  }
}

TEST(Fixture, PaddedFactoryPointHasTheSameCurve) {
  Counterexample ce = counterexample_factory({3, 2, 2, 3});
  EXPECT_DOUBLE_EQ(objective(ce.point), 0.5);
  for (double e : {1e-1, 3e-2, 1e-2}) {
    NetworkPoint pt = ce.point;
    pt.layer(3)(2, 0) += e;
    pt.layer(2)(0, 0) += e * e;
    pt.layer(1)(0, 2) += e;
    const double expected = 0.5 * (1 - std::pow(e, 4) + 2 * std::pow(e, 6) + std::pow(e, 8));
    EXPECT_NEAR(objective(pt), expected, 1e-15);
    EXPECT_LT(objective(pt), 0.5);
  }
}

TEST(Fixture, IntroPointIsNotCertifiedSpurious) {
  Counterexample ce = intro_fixture();
  ClassificationReport r = classify(ce.point);
  EXPECT_TRUE(r.degenerate);
  ASSERT_TRUE(r.probe.has_value());
  EXPECT_FALSE(r.probe->locally_minimal);
  EXPECT_EQ(r.status, CriticalStatus::Inconclusive);
}

TEST(Fixture, AppendixPoint) {
  Counterexample ce = rank_deficient_y_fixture();
  const Matrix prod = network_product(ce.point);
  EXPECT_EQ(prod, mat(3, 3, {0, 0, 0, 0, 4, 0, 0, 0, 0}));
  const Matrix delta = prod * ce.X - ce.Y;
  EXPECT_EQ(max_abs(ce.point.layer(3).transpose() * delta), 0.0);
  EXPECT_EQ(max_abs(delta * ce.point.layer(1).transpose()), 0.0);
  EXPECT_DOUBLE_EQ(objective(ce.point), 2.0);
  EXPECT_LE(tuple_norm(gradient(ce.point)), 1e-12);
  EXPECT_EQ(rank(ce.Y), 2);
  ClassificationReport r = classify(ce.point);
  EXPECT_EQ(r.status, CriticalStatus::SpuriousLocalMin);
  EXPECT_TRUE(r.degenerate);
}

TEST(Factory, ThreeTwoTwoThree) {
  Counterexample ce = counterexample_factory({3, 2, 2, 3});
  EXPECT_EQ(ce.p1, 1);
  EXPECT_EQ(ce.p2, 2);
  EXPECT_DOUBLE_EQ(objective(ce.point), 0.5);
  EXPECT_EQ(tuple_norm(gradient(ce.point)), 0.0);
  EXPECT_EQ(global_value(spec_of(ce.point), ce.X, ce.Y), 0.0);
}

TEST(Factory, NotConstructible) {
  for (const std::vector<int>& dims : {std::vector<int>{4, 2, 2}, std::vector<int>{2, 3, 4}, std::vector<int>{2, 2, 2, 2}}) {
    try {
      counterexample_factory(dims);
      FAIL() << "expected NotConstructible";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::NotConstructible);
    }
  }
}

TEST(Classify, TwoLayerZeroSaddle) {
  NetworkPoint pt = zero_point({2, 1, 2}, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  ClassificationReport r = classify(pt);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.status, CriticalStatus::SecondOrderSaddle);
  ASSERT_TRUE(r.descent_direction.has_value());
  EXPECT_EQ(r.descent_direction->order, 2);
  EXPECT_GT(r.descent_direction->decrease, 1e-10);

  // Hessian by central differences of the analytic gradient.
  const int n = 4;
  Matrix hess(n, n);
  const double step = 1e-5;
  auto grad_at = [&](const Vector& v) {
    NetworkPoint p = pt;
    p.weights = unflatten(v, pt.weights);
    return flatten(gradient(p));
  };
  const Vector x0 = flatten(pt.weights);
  for (int i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e(i) = step;
    hess.col(i) = (grad_at(x0 + e) - grad_at(x0 - e)) / (2 * step);
  }
  hess = (0.5 * (hess + hess.transpose())).eval();
  EXPECT_LE(sym_eigen_desc(hess).values(n - 1), -0.1);
}

TEST(Classify, DeepZeroSaddlesNeedHigherOrder) {
  for (int h = 3; h <= 4; ++h) {
    std::vector<int> dims(static_cast<std::size_t>(h) + 1, 1);
    dims.front() = 2;
    dims.back() = 2;
    NetworkPoint pt = zero_point(dims, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    ClassificationReport r = classify(pt);
    EXPECT_EQ(r.status, CriticalStatus::SaddleHigherOrder) << "h=" << h;
    ASSERT_TRUE(r.descent_direction.has_value());
    EXPECT_EQ(r.descent_direction->order, h);
    // The reported step decreases the objective.
    NetworkPoint moved = pt;
    for (std::size_t k = 0; k < pt.weights.size(); ++k)
      moved.weights[k] += r.descent_direction->step * r.descent_direction->directions[k];
    EXPECT_LT(objective(moved), objective(pt) - 1e-10);
  }
}

TEST(Classify, NotCritical) {
  Rng rng(1);
  NetworkPoint pt = random_point({2, 2, 2}, 3, rng);
  EXPECT_EQ(classify(pt).status, CriticalStatus::NotCritical);
}

TEST(Classify, ExactFactorizationIsGlobal) {
  Rng rng(12);
  NetworkPoint pt = random_point({3, 2, 3}, 4, rng);
  pt.Y = network_product(pt) * pt.X;
  ClassificationReport r = classify(pt);
  EXPECT_EQ(r.status, CriticalStatus::GlobalMin);
  EXPECT_LE(r.objective, r.global_value + 1e-10);
}

TEST(Classify, NonDegenerateLeastSquaresPointIsGlobal) {
  // W2 W1 equals the rank-1 truncation of the least-squares fit with X = I.
  Rng rng(13);
  Matrix y = gaussian_matrix(3, 3, rng);
  Eigen::JacobiSVD<Matrix> s(y, Eigen::ComputeFullU | Eigen::ComputeFullV);
  NetworkPoint pt;
  pt.X = Matrix::Identity(3, 3);
  pt.Y = y;
  pt.weights = {Matrix(s.matrixU().col(0) * s.singularValues()(0)), Matrix(s.matrixV().col(0).transpose())};
  ClassificationReport r = classify(pt);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.status, CriticalStatus::GlobalMin);
  EXPECT_NEAR(r.objective, r.global_value, 1e-10);
}

TEST(Classify, RejectsInconsistentShapes) {
  NetworkPoint pt = zero_point({2, 1, 2}, Matrix::Identity(2, 2), Matrix::Identity(3, 2));
  EXPECT_THROW(classify(pt), Error);
}

TEST(Probe, StrictMinimum) {
  Rng rng(3);
  NetworkPoint pt = random_point({2, 2}, 3, rng);
  pt.Y = pt.weights[0] * pt.X;
  ProbeReport r = local_min_probe(pt, spec_of(pt));
  EXPECT_TRUE(r.locally_minimal);
  EXPECT_EQ(r.radii.size(), 3u);
}

TEST(Probe, ZeroSaddleShowsDecreaseAtEveryRadius) {
  NetworkPoint pt = zero_point({2, 1, 2}, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  ProbeReport r = local_min_probe(pt, spec_of(pt));
  EXPECT_FALSE(r.locally_minimal);
  for (const auto& p : r.radii) EXPECT_LT(p.min_diff, 0.0) << p.radius;
}

TEST(Probe, AppendixPointIsLocallyMinimal) {
  Counterexample ce = rank_deficient_y_fixture();
  EXPECT_TRUE(local_min_probe(ce.point, spec_of(ce.point)).locally_minimal);
}

TEST(Pyramidal, IdentityActivationsCertified) {
  Rng rng(9);
  NetworkPoint pt;
  pt.weights = {gaussian_matrix(2, 3, rng), gaussian_matrix(3, 4, rng)};
  pt.X = gaussian_matrix(4, 3, rng);
  pt.Y = gaussian_matrix(2, 3, rng);
  std::vector<ActivationSpec> acts(2);
  PyramidalCertificate c = pyramidal_check(pt, acts);
  EXPECT_TRUE(c.pyramidal_structure);
  EXPECT_TRUE(c.x_full_column_rank);
  EXPECT_TRUE(c.locally_open);
  EXPECT_TRUE(c.certified);
  EXPECT_NEAR(pyramidal_objective(pt, acts), objective(pt), 1e-12);
}

TEST(Pyramidal, RankDeficientLayerNotCertified) {
  Rng rng(10);
  NetworkPoint pt;
  pt.weights = {gaussian_matrix(2, 3, rng), Matrix(gaussian_matrix(3, 1, rng) * gaussian_matrix(1, 4, rng))};
  pt.X = gaussian_matrix(4, 3, rng);
  pt.Y = gaussian_matrix(2, 3, rng);
  std::vector<ActivationSpec> acts(2, parse_activation("leaky-relu:0.01"));
  PyramidalCertificate c = pyramidal_check(pt, acts);
  EXPECT_FALSE(c.full_row_rank[1]);
  EXPECT_FALSE(c.certified);
}

TEST(Pyramidal, LeakyReluOptimumProbesMinimal) {
  Rng rng(11);
  const int n = 2;
  NetworkPoint pt;
  pt.weights = {gaussian_matrix(2, 3, rng), gaussian_matrix(3, n + 1, rng)};
  pt.X = Matrix::Zero(n + 1, n);
  pt.X.topRows(n).setIdentity();
  std::vector<ActivationSpec> acts(2, parse_activation("leaky-relu:0.1"));
  pt.Y = pyramidal_forward(pt, acts);
  EXPECT_TRUE(pyramidal_check(pt, acts).certified);
  EXPECT_TRUE(pyramidal_probe(pt, acts).locally_minimal);
}

TEST(Pyramidal, ActivationParsing) {
  EXPECT_EQ(parse_activation("tanh").kind, ActivationKind::Tanh);
  EXPECT_EQ(parse_activation("logistic").kind, ActivationKind::Logistic);
  EXPECT_DOUBLE_EQ(parse_activation("leaky-relu:0.2").slope, 0.2);
  EXPECT_THROW(parse_activation("softplus"), Error);
  EXPECT_THROW(parse_activation("leaky-relu:x"), Error);
  EXPECT_THROW(parse_activation("relu").validate(), Error);
  EXPECT_THROW(parse_activation("leaky-relu:0").validate(), Error);
}
