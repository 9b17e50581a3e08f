#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "openmap/error.hpp"

namespace openmap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Tolerances {
  // Relative singular-value cutoff; unset means eps * max(rows, cols).
  std::optional<double> rank_rel;
  double grad_abs = 1e-9;
  double residual_abs = 1e-10;
  std::vector<double> probe_radius_schedule{1e-2, 1e-3, 1e-4};
  int probe_samples = 2000;
  std::uint64_t rng_seed = 12345;

  double rank_rel_for(Eigen::Index rows, Eigen::Index cols) const {
    if (rank_rel) return *rank_rel;
    return std::numeric_limits<double>::epsilon() *
           static_cast<double>(std::max<Eigen::Index>({rows, cols, 1}));
  }

  void validate() const {
    if (rank_rel && !(*rank_rel > 0.0)) throw Error(ErrorKind::InvalidInput, "rank_rel must be positive");
    if (!(grad_abs > 0.0)) throw Error(ErrorKind::InvalidInput, "grad_abs must be positive");
    if (!(residual_abs > 0.0)) throw Error(ErrorKind::InvalidInput, "residual_abs must be positive");
    if (probe_samples <= 0) throw Error(ErrorKind::InvalidInput, "probe_samples must be positive");
    for (std::size_t i = 0; i < probe_radius_schedule.size(); ++i) {
      if (!(probe_radius_schedule[i] > 0.0))
        throw Error(ErrorKind::InvalidInput, "probe radii must be positive");
      if (i > 0 && !(probe_radius_schedule[i] < probe_radius_schedule[i - 1]))
        throw Error(ErrorKind::InvalidInput, "probe radii must be strictly decreasing");
    }
  }
};

// Singular values in this band above the cutoff make the numeric rank unreliable.
inline constexpr double kRankAmbiguityBand = 1e4;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw Error(ErrorKind::InvalidInput, std::string(what) + " has non-finite entries");
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

struct Svd {
  Matrix U;
  Vector S;
  Matrix V;
};

inline Svd svd(const Matrix& m) {
  require_finite(m, "svd input");
  Svd out;
  if (m.size() == 0) {
    out.U = Matrix::Identity(m.rows(), m.rows());
    out.V = Matrix::Identity(m.cols(), m.cols());
    out.S = Vector::Zero(0);
    return out;
  }
  Eigen::JacobiSVD<Matrix> dec(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (dec.info() != Eigen::Success) throw Error(ErrorKind::NumericalFailure, "svd did not converge");
  out.U = dec.matrixU();
  out.S = dec.singularValues();
  out.V = dec.matrixV();
  if (!out.U.allFinite() || !out.S.allFinite() || !out.V.allFinite())
    throw Error(ErrorKind::NumericalFailure, "svd produced non-finite values");
  return out;
}

inline double rank_cutoff(const Vector& s, Eigen::Index rows, Eigen::Index cols, const Tolerances& tol) {
  double smax = s.size() ? s(0) : 0.0;
  return tol.rank_rel_for(rows, cols) * smax;
}

inline int rank_from_singular_values(const Vector& s, double cutoff) {
  if (s.size() == 0 || s(0) == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) ++r;
  return r;
}

inline int rank(const Matrix& m, const Tolerances& tol = {}) {
  if (m.size() == 0) return 0;
  Svd d = svd(m);
  return rank_from_singular_values(d.S, rank_cutoff(d.S, m.rows(), m.cols(), tol));
}

// True when some retained singular value sits so close to the cutoff that a
// slightly different tolerance would change the rank.
inline bool rank_is_ambiguous(const Matrix& m, const Tolerances& tol = {}) {
  if (m.size() == 0) return false;
  Svd d = svd(m);
  double cut = rank_cutoff(d.S, m.rows(), m.cols(), tol);
  if (d.S(0) == 0.0) return false;
  for (Eigen::Index i = 0; i < d.S.size(); ++i)
    if (d.S(i) > cut && d.S(i) <= kRankAmbiguityBand * cut) return true;
  return false;
}

struct SubspaceBasis {
  Matrix columns;
  int dim = 0;
};

inline SubspaceBasis null_space(const Matrix& m, const Tolerances& tol = {}) {
  Svd d = svd(m);
  int r = rank_from_singular_values(d.S, rank_cutoff(d.S, m.rows(), m.cols(), tol));
  SubspaceBasis b;
  b.dim = static_cast<int>(m.cols()) - r;
  b.columns = d.V.rightCols(b.dim);
  return b;
}

inline SubspaceBasis column_space(const Matrix& m, const Tolerances& tol = {}) {
  Svd d = svd(m);
  int r = rank_from_singular_values(d.S, rank_cutoff(d.S, m.rows(), m.cols(), tol));
  SubspaceBasis b;
  b.dim = r;
  b.columns = d.U.leftCols(r);
  return b;
}

// dim(span N1 ∩ span C2) from principal angles. Sines are computed from the
// residual of projecting C2 onto span N1, which keeps small angles accurate.
// An angle counts as zero when its cosine is within rank_rel of 1.
inline int intersection_dim(const SubspaceBasis& n1, const SubspaceBasis& c2, const Tolerances& tol = {}) {
  if (n1.dim == 0 || c2.dim == 0) return 0;
  if (n1.columns.rows() != c2.columns.rows())
    throw Error(ErrorKind::InvalidInput, "subspaces live in different ambient spaces");
  Matrix resid = c2.columns - n1.columns * (n1.columns.transpose() * c2.columns);
  Svd d = svd(resid);
  Eigen::Index amb = n1.columns.rows();
  double cos_tol = tol.rank_rel_for(amb, amb);
  double sin_tol = std::sqrt(cos_tol * (2.0 - cos_tol));
  int count = 0;
  for (Eigen::Index i = 0; i < d.S.size(); ++i)
    if (d.S(i) <= sin_tol) ++count;
  return std::min({count, n1.dim, c2.dim});
}

struct IntersectionResult {
  int dim = 0;
  int by_rank_identity = 0;
  int by_principal_angles = 0;
};

// dim(N(W1) ∩ C(W2)) computed by the rank identity rank(W2) − rank(W1 W2) and
// cross-checked by principal angles.
inline IntersectionResult factor_intersection_dim(const Matrix& w1, const Matrix& w2, const Tolerances& tol = {}) {
  if (w1.cols() != w2.rows()) throw Error(ErrorKind::InvalidInput, "inner dimensions do not match");
  IntersectionResult out;
  Matrix prod = w1 * w2;
  out.by_rank_identity = rank(w2, tol) - rank(prod, tol);
  out.by_principal_angles = intersection_dim(null_space(w1, tol), column_space(w2, tol), tol);
  if (out.by_rank_identity != out.by_principal_angles)
    throw Error(ErrorKind::IllConditioned, "rank identity and principal angles disagree on the intersection dimension");
  out.dim = out.by_rank_identity;
  return out;
}

struct BoundedBasisResult {
  std::vector<int> basis_rows;       // B, ascending, 0-based
  std::vector<int> dependent_rows;   // complement of B, ascending
  Matrix coeffs;                     // rows of V[dependent] = coeffs * V[basis]
  double bound = 1.0;                // 2^(m-r-1)
  double achieved = 0.0;             // max |coeffs_ij|
  int rank = 0;
};

namespace detail {

inline Matrix right_inverse(const Matrix& a) { return a.transpose() * (a * a.transpose()).inverse(); }
inline Matrix left_inverse(const Matrix& a) { return (a.transpose() * a).inverse() * a.transpose(); }

inline Matrix take_rows(const Matrix& v, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), v.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = v.row(idx[i]);
  return out;
}

inline Matrix take_cols(const Matrix& v, const std::vector<int>& idx) {
  Matrix out(v.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = v.col(idx[i]);
  return out;
}

// Coefficients expressing the rows `dep` of v in terms of the rows `basis`.
inline Matrix row_coefficients(const Matrix& v, const std::vector<int>& basis, const std::vector<int>& dep) {
  Matrix vb = take_rows(v, basis);
  Matrix vd = take_rows(v, dep);
  if (basis.empty()) return Matrix::Zero(static_cast<Eigen::Index>(dep.size()), 0);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(vb.transpose());
  return cod.solve(vd.transpose()).transpose();
}

}  // namespace detail

// Chooses r = rank(V) rows of V so that every other row is a combination of the
// chosen ones with coefficients bounded by 2^(m-r-1).
inline BoundedBasisResult bounded_basis(const Matrix& v, const Tolerances& tol = {}) {
  require_finite(v, "bounded_basis input");
  const int m = static_cast<int>(v.rows());
  Svd d = svd(v);
  const double cut = rank_cutoff(d.S, v.rows(), v.cols(), tol);
  const int r = rank_from_singular_values(d.S, cut);
  if (r >= m) throw Error(ErrorKind::NotRankDeficient, "bounded_basis needs rank(V) < rows(V)");

  // Start basis: first independent rows in natural order.
  std::vector<int> basis;
  for (int i = 0; i < m && static_cast<int>(basis.size()) < r; ++i) {
    std::vector<int> trial = basis;
    trial.push_back(i);
    Matrix sub = detail::take_rows(v, trial);
    Svd ds = svd(sub);
    if (rank_from_singular_values(ds.S, cut) == static_cast<int>(trial.size())) basis = trial;
  }
  if (static_cast<int>(basis.size()) != r)
    throw Error(ErrorKind::NumericalFailure, "could not select independent rows");

  // Add the remaining rows one at a time; after each addition the coefficients
  // obey the bound for the rows processed so far.
  std::vector<int> dep;
  for (int i = 0; i < m; ++i) {
    if (std::find(basis.begin(), basis.end(), i) != basis.end()) continue;
    dep.push_back(i);
    const int processed = r + static_cast<int>(dep.size());
    const double level = std::ldexp(1.0, processed - r - 1);
    for (int guard = 0; guard < 64 * m; ++guard) {
      Matrix a = detail::row_coefficients(v, basis, dep);
      if (a.size() == 0) break;
      Eigen::Index ri, ci;
      double amax = a.cwiseAbs().maxCoeff(&ri, &ci);
      if (amax <= level * (1.0 + 1e-12)) break;
      std::swap(basis[static_cast<std::size_t>(ci)], dep[static_cast<std::size_t>(ri)]);
    }
  }

  BoundedBasisResult out;
  out.rank = r;
  std::sort(basis.begin(), basis.end());
  std::sort(dep.begin(), dep.end());
  out.basis_rows = basis;
  out.dependent_rows = dep;
  out.coeffs = detail::row_coefficients(v, basis, dep);
  out.bound = std::ldexp(1.0, m - r - 1);
  out.achieved = max_abs(out.coeffs);
  if (out.achieved > out.bound * (1.0 + 1e-9))
    throw Error(ErrorKind::NumericalFailure, "coefficient bound violated after swaps");
  return out;
}

}  // namespace openmap
