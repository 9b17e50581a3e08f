#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "openmap/numeric.hpp"
#include "openmap/openness.hpp"
#include "openmap/random.hpp"

namespace openmap {

struct RealizationWitness {
  Matrix delta_w1;
  Matrix delta_w2;
  double target_residual = 0.0;
  double delta_norm = 0.0;
  double input_delta = 0.0;
  Regime regime = Regime::FullRank;
  std::string route;
  double epsilon = 0.0;
  // Largest admissible input_delta for this construction; unset when unbounded.
  std::optional<double> delta0;
};

namespace detail {

inline void finish_witness(RealizationWitness& w, const FactorPair& p, const Matrix& target) {
  w.target_residual = ((p.w1 + w.delta_w1) * (p.w2 + w.delta_w2) - target).norm();
  w.delta_norm = std::max(w.delta_w1.norm(), w.delta_w2.norm());
  if (!std::isfinite(w.target_residual) || !std::isfinite(w.delta_norm))
    throw Error(ErrorKind::NumericalFailure, "realization produced non-finite values");
}

inline RealizationWitness realize_full_rank(const FactorPair& p, const Matrix& target, OpennessReport& rep,
                                            const Tolerances& tol) {
  RealizationWitness w;
  w.regime = Regime::FullRank;
  const Matrix r = target - p.product();
  const double delta = r.norm();
  const int m = static_cast<int>(p.m()), n = static_cast<int>(p.n());
  if (rep.rank_w1 == m) {
    w.route = "left-factor-right-inverse";
    w.delta_w1 = Matrix::Zero(p.m(), p.k());
    w.delta_w2 = right_inverse(p.w1) * r;
  } else if (rep.rank_w2 == n) {
    w.route = "right-factor-left-inverse";
    w.delta_w2 = Matrix::Zero(p.k(), p.n());
    w.delta_w1 = r * left_inverse(p.w2);
  } else {
    // Restore full rank of one factor with a witness scaled to √δ, then solve
    // the remaining linear equation exactly.
    Witnesses wit = construct_witnesses(p, tol);
    const double s = std::sqrt(delta);
    if (wit.w1_tilde && wit.w1_tilde->norm() > 0) {
      w.route = "left-witness-completion";
      w.delta_w1 = s * *wit.w1_tilde / wit.w1_tilde->norm();
      w.delta_w2 = right_inverse(p.w1 + w.delta_w1) * r;
    } else if (wit.w2_tilde && wit.w2_tilde->norm() > 0) {
      w.route = "right-witness-completion";
      w.delta_w2 = s * *wit.w2_tilde / wit.w2_tilde->norm();
      w.delta_w1 = r * left_inverse(p.w2 + w.delta_w2);
    } else {
      throw Error(ErrorKind::NumericalFailure, "no usable witness for the full-rank regime");
    }
    w.epsilon = s;
  }
  w.input_delta = delta;
  finish_witness(w, p, target);
  return w;
}

// Rotates the trailing columns of `basis` (from index r on) so that
// `data * basis` has orthogonal trailing columns of decreasing norm.
inline void align_trailing(Matrix& basis, const Matrix& data, int r) {
  const Eigen::Index t = basis.cols() - r;
  if (t <= 1) return;
  Matrix tail = basis.rightCols(t);
  Svd d = svd(data * tail);
  basis.rightCols(t) = tail * d.V;
}

}  // namespace detail

// Largest admissible input distance for witness scale eps in the rank-deficient
// construction, together with the inverse used by it.
struct RankDeficientScale {
  double delta0 = 0.0;
  Matrix m_inv;
  Matrix w2_tilde1;
};

inline RealizationWitness realize(const FactorPair& p, const Matrix& target, const Tolerances& tol = {},
                                  std::optional<double> epsilon = std::nullopt) {
  p.validate();
  require_finite(target, "target");
  if (target.rows() != p.m() || target.cols() != p.n())
    throw Error(ErrorKind::InvalidInput, "target shape must match W1 W2");
  const int m = static_cast<int>(p.m()), k = static_cast<int>(p.k()), n = static_cast<int>(p.n());
  const int qmax = std::min({m, n, k});
  if (rank(target, tol) > qmax) throw Error(ErrorKind::RankInfeasible, "target rank exceeds min(m, n, k)");
  OpennessReport rep = check_openness(p, tol);
  if (!rep.open) throw Error(ErrorKind::NotOpen, "the product map is not locally open at this point");

  const Matrix z = p.product();
  const double input_delta = (target - z).norm();
  if (input_delta == 0.0) {
    RealizationWitness w;
    w.regime = rep.regime;
    w.route = "identity";
    w.delta_w1 = Matrix::Zero(m, k);
    w.delta_w2 = Matrix::Zero(k, n);
    detail::finish_witness(w, p, target);
    return w;
  }
  if (rep.regime == Regime::FullRank) return detail::realize_full_rank(p, target, rep, tol);

  // Rotate to the singular bases of W1 W2.
  Svd dz = svd(z);
  const int r = rep.rank_product;
  Matrix u = dz.U, v = dz.V;
  const Matrix target_u = u.transpose() * target;
  detail::align_trailing(v, target_u, r);
  detail::align_trailing(u, Matrix((target * v).transpose()), r);
  const Matrix w1b = u.transpose() * p.w1;
  const Matrix w2b = p.w2 * v;
  const Matrix st = u.transpose() * target * v;
  const Matrix rd = st - w1b * w2b;
  const double sigma_min = r > 0 ? dz.S(r - 1) : std::numeric_limits<double>::infinity();

  // Column classification of the rotated target.
  BoundedBasisResult bb = bounded_basis(Matrix(st.transpose()), tol);
  for (int j = 0; j < r; ++j)
    if (std::find(bb.basis_rows.begin(), bb.basis_rows.end(), j) == bb.basis_rows.end())
      throw Error(ErrorKind::DeltaTooLarge, "a pivot column was classified dependent", sigma_min / 2.0, j);
  std::vector<int> first;
  for (int j = 0; j < r; ++j) first.push_back(j);
  for (int b : bb.basis_rows)
    if (b >= r) first.push_back(b);
  for (int c : bb.dependent_rows)
    if (static_cast<int>(first.size()) < k) first.push_back(c);
  std::vector<int> rest;
  for (int c = 0; c < n; ++c)
    if (std::find(first.begin(), first.end(), c) == first.end()) rest.push_back(c);
  Matrix abar = Matrix::Zero(k, static_cast<Eigen::Index>(rest.size()));
  for (std::size_t ci = 0; ci < rest.size(); ++ci) {
    auto dit = std::find(bb.dependent_rows.begin(), bb.dependent_rows.end(), rest[ci]);
    const Eigen::Index drow = dit - bb.dependent_rows.begin();
    for (std::size_t bi = 0; bi < bb.basis_rows.size(); ++bi) {
      const auto pos = std::find(first.begin(), first.end(), bb.basis_rows[bi]) - first.begin();
      abar(pos, static_cast<Eigen::Index>(ci)) = bb.coeffs(drow, static_cast<Eigen::Index>(bi));
    }
  }

  const Matrix w2b1 = detail::take_cols(w2b, first);
  SubspaceBasis nb = null_space(w1b, tol);
  if (nb.dim != k - r) throw Error(ErrorKind::NumericalFailure, "null space of W1 has unexpected dimension");
  const double c_norm = w2b1.norm();
  const double big_k = static_cast<double>(n) * std::ldexp(1.0, n);
  const double lin_term = r > 0 ? std::sqrt(2.0) * c_norm * (2.0 + 2.0 * big_k) / sigma_min : 0.0;
  const double scale_div = static_cast<double>(n) * std::ldexp(1.0, n + 1);

  auto at_scale = [&](double eps) {
    RankDeficientScale s;
    s.w2_tilde1 = Matrix::Zero(k, k);
    s.w2_tilde1.rightCols(k - r) = (eps / scale_div) * nb.columns;
    Matrix mm = w2b1 + s.w2_tilde1;
    Eigen::FullPivLU<Matrix> lu(mm);
    if (!lu.isInvertible()) {
      s.delta0 = 0.0;
      return s;
    }
    s.m_inv = lu.inverse();
    s.delta0 = std::min(eps / (1.0 + std::max(s.m_inv.norm(), lin_term)), sigma_min / 2.0);
    return s;
  };

  double eps;
  if (epsilon) {
    eps = *epsilon;
    RankDeficientScale s = at_scale(eps);
    if (input_delta > s.delta0)
      throw Error(ErrorKind::DeltaTooLarge, "input distance exceeds the admissible radius", s.delta0);
  } else {
    if (input_delta >= sigma_min / 2.0)
      throw Error(ErrorKind::DeltaTooLarge, "input distance exceeds the admissible radius", sigma_min / 2.0);
    // Smallest witness scale whose admissible radius covers input_delta.
    double lo = 0.0, hi = input_delta;
    for (int i = 0; i < 400 && at_scale(hi).delta0 < input_delta; ++i) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
      double mid = 0.5 * (lo + hi);
      if (at_scale(mid).delta0 >= input_delta)
        hi = mid;
      else
        lo = mid;
    }
    eps = hi;
  }
  RankDeficientScale s = at_scale(eps);
  if (!(s.delta0 >= input_delta))
    throw Error(ErrorKind::DeltaTooLarge, "input distance exceeds the admissible radius", s.delta0);

  const Matrix mm = w2b1 + s.w2_tilde1;
  const Matrix w1b0 = detail::take_cols(rd, first) * s.m_inv;
  Matrix w2b0 = Matrix::Zero(k, n);
  for (std::size_t i = 0; i < first.size(); ++i) w2b0.col(first[i]) = s.w2_tilde1.col(static_cast<Eigen::Index>(i));
  const Matrix tail = mm * abar;
  for (std::size_t i = 0; i < rest.size(); ++i)
    w2b0.col(rest[i]) = tail.col(static_cast<Eigen::Index>(i)) - w2b.col(rest[i]);

  RealizationWitness w;
  w.regime = Regime::RankDeficient;
  w.route = "column-classification";
  w.epsilon = eps;
  w.delta0 = s.delta0;
  w.input_delta = input_delta;
  w.delta_w1 = u * w1b0;
  w.delta_w2 = w2b0 * v.transpose();
  detail::finish_witness(w, p, target);
  return w;
}

struct DeltaRatioRow {
  double delta = 0.0;
  int successes = 0;
  int failures = 0;
  double max_ratio = 0.0;
  double max_residual = 0.0;
  std::vector<std::string> errors;
};

inline std::vector<DeltaRatioRow> measure_delta_ratio(const FactorPair& p, const std::vector<double>& deltas,
                                                      int trials, const Tolerances& tol = {}) {
  std::vector<DeltaRatioRow> table;
  const int q = static_cast<int>(std::min({p.m(), p.n(), p.k()}));
  const Matrix z = p.product();
  for (std::size_t di = 0; di < deltas.size(); ++di) {
    DeltaRatioRow row;
    row.delta = deltas[di];
    for (int t = 0; t < trials; ++t) {
      Rng rng(derive_seed(tol.rng_seed, di * 1000003ULL + static_cast<std::uint64_t>(t)));
      Matrix target = sample_feasible_target(z, q, deltas[di], rng);
      try {
        RealizationWitness w = realize(p, target, tol);
        ++row.successes;
        row.max_ratio = std::max(row.max_ratio, w.delta_norm / deltas[di]);
        row.max_residual = std::max(row.max_residual, w.target_residual);
      } catch (const Error& e) {
        ++row.failures;
        row.errors.push_back(to_string(e.kind()));
      }
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace openmap
