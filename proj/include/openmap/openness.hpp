#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "openmap/numeric.hpp"
#include "openmap/random.hpp"

namespace openmap {

struct FactorPair {
  Matrix w1;  // m x k
  Matrix w2;  // k x n

  FactorPair() = default;
  FactorPair(Matrix a, Matrix b) : w1(std::move(a)), w2(std::move(b)) { validate(); }

  Eigen::Index m() const { return w1.rows(); }
  Eigen::Index k() const { return w1.cols(); }
  Eigen::Index n() const { return w2.cols(); }
  Matrix product() const { return w1 * w2; }

  void validate() const {
    if (w1.cols() != w2.rows()) throw Error(ErrorKind::InvalidInput, "cols(W1) must equal rows(W2)");
    require_finite(w1, "W1");
    require_finite(w2, "W2");
  }
};

enum class Regime { FullRank, RankDeficient };

inline const char* to_string(Regime r) { return r == Regime::FullRank ? "FullRank" : "RankDeficient"; }

struct OpennessReport {
  Regime regime = Regime::FullRank;
  bool open = false;
  int rank_w1 = 0;
  int rank_w2 = 0;
  int rank_product = 0;
  int intersection_dim_value = 0;             // dim N(W1) ∩ C(W2)
  int transposed_intersection_dim_value = 0;  // dim N(W2ᵀ) ∩ C(W1ᵀ)
  std::map<std::string, bool> condition_flags;
  std::optional<Matrix> witness_w1_tilde;
  std::optional<Matrix> witness_w2_tilde;
};

inline Regime regime_of(const FactorPair& p) {
  return p.k() >= std::min(p.m(), p.n()) ? Regime::FullRank : Regime::RankDeficient;
}

inline OpennessReport check_openness(const FactorPair& p, const Tolerances& tol = {}) {
  p.validate();
  const Matrix prod = p.product();
  for (const Matrix* mat : {&p.w1, &p.w2, &prod})
    if (rank_is_ambiguous(*mat, tol))
      throw Error(ErrorKind::IllConditioned, "numeric rank is within the ambiguity band of the cutoff");

  OpennessReport rep;
  rep.regime = regime_of(p);
  rep.rank_w1 = rank(p.w1, tol);
  rep.rank_w2 = rank(p.w2, tol);
  rep.rank_product = rank(prod, tol);
  rep.intersection_dim_value = factor_intersection_dim(p.w1, p.w2, tol).dim;
  rep.transposed_intersection_dim_value =
      factor_intersection_dim(Matrix(p.w2.transpose()), Matrix(p.w1.transpose()), tol).dim;

  const int m = static_cast<int>(p.m()), k = static_cast<int>(p.k()), n = static_cast<int>(p.n());
  const int d = rep.intersection_dim_value;
  const int r1 = rep.rank_w1, r2 = rep.rank_w2, rp = rep.rank_product;
  auto& f = rep.condition_flags;

  if (rep.regime == Regime::FullRank) {
    // Statement 3.
    f["stmt3_a"] = d <= k - m;
    f["stmt3_b"] = n - (r2 - d) <= k - r1;
    // Statement 2: the largest rank reachable by W1 + W̃1 with W̃1 W2 = 0 is
    // rank(W1 W2) + k − rank(W2); symmetrically for W2 + W̃2.
    f["stmt2_a"] = std::min(m, rp + k - r2) == m;
    f["stmt2_b"] = std::min(n, rp + k - r1) == n;
    rep.open = f["stmt3_a"] || f["stmt3_b"];
  } else {
    f["ranks_equal"] = r1 == r2;
    f["i"] = std::min(k, rp + k - r2) == k;
    f["ii"] = std::min(k, rp + k - r1) == k;
    f["iii"] = d == 0;
    f["iv"] = rep.transposed_intersection_dim_value == 0;
    rep.open = f["ranks_equal"] && f["iii"];
  }
  return rep;
}

namespace detail {

inline double witness_scale(const Matrix& w, const Tolerances& tol) {
  if (w.size() == 0) return 0.5;
  Svd d = svd(w);
  int r = rank_from_singular_values(d.S, rank_cutoff(d.S, w.rows(), w.cols(), tol));
  return r == 0 ? 0.5 : d.S(r - 1) / 2.0;
}

// Returns W̃ with columns in span(nb) such that w + W̃ has full rank, or
// nothing when no attempt succeeds.
inline std::optional<Matrix> complete_to_full_rank(const Matrix& w, const Matrix& nb, const Matrix& annihilator,
                                                   double eps, const Tolerances& tol) {
  const Eigen::Index rows = w.rows(), cols = w.cols();
  const int target = static_cast<int>(std::min(rows, cols));
  auto accept = [&](const Matrix& cand) {
    if (max_abs(annihilator * cand) > tol.residual_abs) return false;
    return rank(w + cand, tol) == target && !rank_is_ambiguous(w + cand, tol);
  };
  if (rank(w, tol) == target) {
    Matrix zero = Matrix::Zero(rows, cols);
    return zero;
  }
  const Eigen::Index q = nb.cols();
  // Independent columns of w stay; null vectors go into the remaining ones.
  Svd dw = svd(w);
  const double cut = rank_cutoff(dw.S, rows, cols, tol);
  std::vector<int> keep;
  for (int j = 0; j < cols; ++j) {
    std::vector<int> trial = keep;
    trial.push_back(j);
    Svd ds = svd(take_cols(w, trial));
    if (rank_from_singular_values(ds.S, cut) == static_cast<int>(trial.size())) keep = trial;
  }
  Matrix cand = Matrix::Zero(rows, cols);
  Eigen::Index placed = 0;
  for (int j = 0; j < cols && placed < q; ++j) {
    if (std::find(keep.begin(), keep.end(), j) != keep.end()) continue;
    cand.col(j) = eps * nb.col(placed++);
  }
  if (accept(cand)) return cand;

  Rng rng(derive_seed(tol.rng_seed, 0x717));
  for (int attempt = 0; attempt < 16; ++attempt) {
    Matrix c2 = nb * gaussian_matrix(q, cols, rng);
    double s = c2.norm();
    if (s > 0) c2 *= eps * std::sqrt(static_cast<double>(std::min(q, cols))) / s;
    if (accept(c2)) return c2;
  }
  return std::nullopt;
}

}  // namespace detail

struct Witnesses {
  std::optional<Matrix> w1_tilde;  // W̃1 W2 = 0, W1 + W̃1 full rank
  std::optional<Matrix> w2_tilde;  // W1 W̃2 = 0, W2 + W̃2 full rank
};

// Witness matrices for the conditions of the openness characterization.
// In the rank-deficient regime both are returned; in the full-rank regime
// each one is returned when its clause holds.
inline Witnesses construct_witnesses(const FactorPair& p, const Tolerances& tol = {}) {
  OpennessReport rep = check_openness(p, tol);
  if (!rep.open) throw Error(ErrorKind::NotOpen, "point is not locally open");
  const bool want1 = rep.regime == Regime::RankDeficient || rep.condition_flags["stmt2_a"];
  const bool want2 = rep.regime == Regime::RankDeficient || rep.condition_flags["stmt2_b"];
  Witnesses out;
  if (want2) {
    SubspaceBasis nb = null_space(p.w1, tol);
    auto w = detail::complete_to_full_rank(p.w2, nb.columns, p.w1, detail::witness_scale(p.w2, tol), tol);
    if (!w) throw Error(ErrorKind::GenericScaleFailed, "could not restore full rank of W2 + W̃2");
    out.w2_tilde = *w;
  }
  if (want1) {
    Matrix w1t = p.w1.transpose(), w2t = p.w2.transpose();
    SubspaceBasis nb = null_space(w2t, tol);
    auto w = detail::complete_to_full_rank(w1t, nb.columns, w2t, detail::witness_scale(p.w1, tol), tol);
    if (!w) throw Error(ErrorKind::GenericScaleFailed, "could not restore full rank of W1 + W̃1");
    out.w1_tilde = Matrix(w->transpose());
  }
  return out;
}

// A random point of the rank-constrained range at distance delta from z.
inline Matrix sample_feasible_target(const Matrix& z, int max_rank, double delta, Rng& rng) {
  if (delta == 0.0) return z;
  Matrix g = gaussian_matrix(z.rows(), z.cols(), rng);
  g /= g.norm();
  auto truncate = [&](const Matrix& a) {
    Svd d = svd(a);
    Matrix s = Matrix::Zero(a.rows(), a.cols());
    for (int i = 0; i < std::min<int>(max_rank, static_cast<int>(d.S.size())); ++i) s(i, i) = d.S(i);
    return Matrix(d.U * s * d.V.transpose());
  };
  if (max_rank >= std::min(z.rows(), z.cols())) return z + delta * g;
  auto dist = [&](double t) { return (truncate(z + t * g) - z).norm(); };
  double lo = 0.0, hi = delta;
  for (int i = 0; i < 200 && dist(hi) < delta; ++i) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (dist(mid) < delta)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-14 * hi) break;
  }
  return truncate(z + hi * g);
}

struct FactorRecovery {
  bool success = false;
  double residual = 0.0;
  double factor_norm = 0.0;
  Matrix a, b;
};

// Levenberg–Marquardt on (W1+A)(W2+B) = target with minimum-norm steps,
// iterates confined to the ball ‖(A,B)‖ ≤ cap.
inline FactorRecovery recover_factors(const FactorPair& p, const Matrix& target, double cap, const Tolerances& tol,
                                      Rng& rng, int restarts = 4, int max_iter = 60) {
  const Eigen::Index m = p.m(), k = p.k(), n = p.n();
  const Eigen::Index na = m * k, nvar = m * k + k * n, neq = m * n;
  FactorRecovery best;
  best.residual = std::numeric_limits<double>::infinity();
  const double delta_scale = (target - p.product()).norm();
  for (int attempt = 0; attempt < restarts; ++attempt) {
    Matrix a = Matrix::Zero(m, k), b = Matrix::Zero(k, n);
    if (attempt > 0) {
      // Jitter at the scale of a balanced second-order solution.
      double s = std::sqrt(delta_scale) * std::pow(0.5, attempt - 1);
      s = std::min(s, 0.25 * cap);
      a = s * gaussian_matrix(m, k, rng) / std::sqrt(static_cast<double>(nvar));
      b = s * gaussian_matrix(k, n, rng) / std::sqrt(static_cast<double>(nvar));
    }
    double lambda = 1e-3 * std::max(1.0, (p.w1.norm() + p.w2.norm()));
    Matrix f = (p.w1 + a) * (p.w2 + b) - target;
    double fn = f.norm();
    Matrix jac(neq, nvar);
    for (int it = 0; it < max_iter && fn > tol.residual_abs; ++it) {
      const Matrix l = p.w1 + a, r = p.w2 + b;
      jac.setZero();
      // d vec(F) / d A(i,c): row (i, j) gets r(c, j).
      for (Eigen::Index c = 0; c < k; ++c)
        for (Eigen::Index i = 0; i < m; ++i)
          for (Eigen::Index j = 0; j < n; ++j) jac(i + j * m, i + c * m) = r(c, j);
      // d vec(F) / d B(c, j): row (i, j) gets l(i, c).
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index c = 0; c < k; ++c)
          for (Eigen::Index i = 0; i < m; ++i) jac(i + j * m, na + c + j * k) = l(i, c);
      Eigen::Map<const Vector> fv(f.data(), neq);
      Matrix jjt = jac * jac.transpose();
      bool improved = false;
      for (int tries = 0; tries < 12; ++tries) {
        Matrix sys = jjt;
        sys.diagonal().array() += lambda;
        Vector y = sys.ldlt().solve(fv);
        Vector dx = -(jac.transpose() * y);
        Matrix a2 = a + Eigen::Map<const Matrix>(dx.data(), m, k);
        Matrix b2 = b + Eigen::Map<const Matrix>(dx.data() + na, k, n);
        double nrm = std::sqrt(a2.squaredNorm() + b2.squaredNorm());
        Matrix f2 = (p.w1 + a2) * (p.w2 + b2) - target;
        double fn2 = f2.norm();
        if (nrm <= cap && fn2 < fn) {
          a = a2;
          b = b2;
          f = f2;
          fn = fn2;
          lambda = std::max(lambda * 0.1, 1e-300);
          improved = true;
          break;
        }
        lambda *= 10.0;
      }
      if (!improved) break;
    }
    double nrm = std::sqrt(a.squaredNorm() + b.squaredNorm());
    bool ok = fn <= tol.residual_abs && nrm <= cap;
    if (ok || fn < best.residual) {
      best.success = ok;
      best.residual = fn;
      best.factor_norm = nrm;
      best.a = a;
      best.b = b;
    }
    if (ok) break;
  }
  return best;
}

struct OpennessProbeTrial {
  bool success = false;
  double residual = 0.0;
  double factor_norm = 0.0;
  double target_distance = 0.0;
};

struct OpennessProbeReport {
  double delta = 0.0;
  int trials = 0;
  int successes = 0;
  double success_fraction = 1.0;
  double max_factor_norm = 0.0;
  std::vector<OpennessProbeTrial> records;
};

// Slack on the factor perturbation relative to delta.
inline constexpr double kProbeNormSlack = 1e3;

inline OpennessProbeTrial probe_openness_trial(const FactorPair& p, double delta, const Tolerances& tol,
                                               std::uint64_t seed) {
  Rng rng(seed);
  const int q = static_cast<int>(std::min({p.m(), p.n(), p.k()}));
  Matrix z = p.product();
  Matrix target = sample_feasible_target(z, q, delta, rng);
  OpennessProbeTrial t;
  t.target_distance = (target - z).norm();
  FactorRecovery rec = recover_factors(p, target, kProbeNormSlack * delta, tol, rng);
  t.success = rec.success;
  t.residual = rec.residual;
  t.factor_norm = rec.factor_norm;
  return t;
}

inline OpennessProbeReport probe_openness(const FactorPair& p, double delta, int trials, const Tolerances& tol = {}) {
  p.validate();
  if (!(delta >= 0.0)) throw Error(ErrorKind::InvalidInput, "delta must be non-negative");
  OpennessProbeReport rep;
  rep.delta = delta;
  rep.trials = trials;
  if (delta == 0.0 || trials <= 0) {
    rep.successes = std::max(trials, 0);
    rep.success_fraction = 1.0;
    return rep;
  }
  for (int t = 0; t < trials; ++t) {
    OpennessProbeTrial rec = probe_openness_trial(p, delta, tol, derive_seed(tol.rng_seed, static_cast<std::uint64_t>(t)));
    if (rec.success) {
      ++rep.successes;
      rep.max_factor_norm = std::max(rep.max_factor_norm, rec.factor_norm);
    }
    rep.records.push_back(rec);
  }
  rep.success_fraction = static_cast<double>(rep.successes) / trials;
  return rep;
}

}  // namespace openmap
