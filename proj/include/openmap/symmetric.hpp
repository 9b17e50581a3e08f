#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "openmap/numeric.hpp"

namespace openmap {

struct SymSolveResult {
  Matrix P;                        // upper triangular
  double residual = 0.0;           // ‖P + Pᵀ + P Σ⁻¹ Pᵀ − R‖
  double max_equation_residual = 0.0;
  double p_inf_norm = 0.0;
  double r_inf_norm = 0.0;
};

// Conservative radius on ‖R‖_∞ under which the recursion stays well inside
// its domain.
inline double solve_p_delta0(const Vector& sigma) {
  if (sigma.size() == 0) return std::numeric_limits<double>::infinity();
  return sigma.minCoeff() / (8.0 * static_cast<double>(sigma.size()));
}

inline Matrix p_equation_lhs(const Vector& sigma, const Matrix& p) {
  return p + p.transpose() + p * sigma.cwiseInverse().asDiagonal() * p.transpose();
}

// Upper-triangular P with P + Pᵀ + P Σ⁻¹ Pᵀ = R, built column by column from
// the last one.
inline SymSolveResult solve_p(const Vector& sigma, const Matrix& r, const Tolerances& tol = {}) {
  const Eigen::Index n = sigma.size();
  if (r.rows() != n || r.cols() != n) throw Error(ErrorKind::InvalidInput, "R must be n x n with n = len(Sigma)");
  require_finite(r, "R");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(sigma(i) > 0.0) || !std::isfinite(sigma(i)))
      throw Error(ErrorKind::InvalidInput, "Sigma entries must be positive");
  if (max_abs(r - r.transpose()) > tol.residual_abs) throw Error(ErrorKind::InvalidInput, "R must be symmetric");

  const Vector s = sigma.cwiseInverse();
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    double acc = 0.0;
    for (Eigen::Index l = j + 1; l < n; ++l) acc += s(j) * s(l) * p(j, l) * p(j, l);
    const double radicand = s(j) * r(j, j) + 1.0 - acc;
    if (radicand < 0.0)
      throw Error(ErrorKind::DeltaTooLarge, "negative radicand in the diagonal recursion",
                  solve_p_delta0(sigma), static_cast<int>(j));
    const double root = std::sqrt(radicand);
    if (root < 0.5)
      throw Error(ErrorKind::PivotTooSmall, "pivot s_j P_jj + 1 fell below 1/2", solve_p_delta0(sigma),
                  static_cast<int>(j));
    p(j, j) = (root - 1.0) / s(j);
    const double pivot = s(j) * p(j, j) + 1.0;
    for (Eigen::Index i = j - 1; i >= 0; --i) {
      double sum = 0.0;
      for (Eigen::Index l = j + 1; l < n; ++l) sum += s(l) * p(i, l) * p(j, l);
      p(i, j) = (r(i, j) - sum) / pivot;
    }
  }
  SymSolveResult out;
  out.P = p;
  const Matrix res = p_equation_lhs(sigma, p) - r;
  out.residual = res.norm();
  out.max_equation_residual = max_abs(Matrix(res.triangularView<Eigen::Upper>()));
  out.p_inf_norm = max_abs(p);
  out.r_inf_norm = max_abs(r);
  return out;
}

struct SymRealizationWitness {
  Matrix A_eps;
  double residual = 0.0;
  double a_norm = 0.0;
  double input_delta = 0.0;
  int rank = 0;
  std::optional<double> sigma_min;
  std::optional<double> bound;  // δ (3r^2.5 + √(2r) + √σ_min) / √σ_min
};

inline double bm_bound_coefficient(int r, double sigma_min) {
  const double rs = std::sqrt(sigma_min);
  return (3.0 * std::pow(static_cast<double>(r), 2.5) + std::sqrt(2.0 * r) + rs) / rs;
}

struct SymEigen {
  Vector values;  // descending
  Matrix vectors;
};

inline SymEigen sym_eigen_desc(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::NumericalFailure, "eigendecomposition failed");
  SymEigen out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  return out;
}

// A with (W + A)(W + A)ᵀ = Σ̃.
inline SymRealizationWitness sym_realize(const Matrix& w, const Matrix& sigma_tilde, const Tolerances& tol = {}) {
  require_finite(w, "W");
  require_finite(sigma_tilde, "Sigma_tilde");
  const Eigen::Index n = w.rows(), k = w.cols();
  if (sigma_tilde.rows() != n || sigma_tilde.cols() != n)
    throw Error(ErrorKind::InvalidInput, "Sigma_tilde must be n x n with n = rows(W)");
  if (max_abs(sigma_tilde - sigma_tilde.transpose()) > tol.residual_abs)
    throw Error(ErrorKind::InvalidInput, "Sigma_tilde must be symmetric");
  const Matrix st = 0.5 * (sigma_tilde + sigma_tilde.transpose());
  SymEigen et = sym_eigen_desc(st);
  if (n > 0 && et.values(n - 1) < -tol.residual_abs) throw Error(ErrorKind::NotPSD, "Sigma_tilde is not PSD");
  for (Eigen::Index i = k; i < n; ++i)
    if (et.values(i) > tol.residual_abs) throw Error(ErrorKind::RankInfeasible, "rank(Sigma_tilde) exceeds k");

  // Diagonalize W Wᵀ.
  SymEigen ew = sym_eigen_desc(w * w.transpose());
  const int r = rank(w, tol);
  const Matrix u = ew.vectors;
  Matrix wb = u.transpose() * w;
  wb.bottomRows(n - r).setZero();
  const Matrix wb1 = wb.topRows(r);
  const Vector sig1 = (wb1 * wb1.transpose()).diagonal();
  const Matrix rr = u.transpose() * st * u - wb * wb.transpose();
  const Matrix r1 = rr.topLeftCorner(r, r);
  const Matrix r2 = rr.topRightCorner(r, n - r);
  const Matrix r3 = rr.bottomRightCorner(n - r, n - r);

  Matrix a1 = Matrix::Zero(r, k);
  if (r > 0) {
    Matrix r1s = 0.5 * (r1 + r1.transpose());
    // W̄1 W̄1ᵀ is diagonal up to rounding; fold the off-diagonal part into R1.
    Matrix off = wb1 * wb1.transpose();
    off.diagonal().setZero();
    r1s += off;
    SymSolveResult ps;
    try {
      ps = solve_p(sig1, r1s, tol);
    } catch (const Error& e) {
      throw Error(ErrorKind::DeltaTooLarge, std::string("P-equation refused: ") + e.what(),
                  sig1.minCoeff() / 2.0);
    }
    a1 = ps.P * sig1.cwiseInverse().asDiagonal() * wb1;
  }
  const Matrix m1 = wb1 + a1;
  Matrix a2t = Matrix::Zero(k, n - r);
  if (n - r > 0) {
    Matrix schur = r3;
    Matrix m1_pinv = Matrix::Zero(k, r);
    if (r > 0) {
      Matrix g = m1 * m1.transpose();
      Eigen::LDLT<Matrix> ldlt(g);
      m1_pinv = m1.transpose() * ldlt.solve(Matrix::Identity(r, r));
      schur -= r2.transpose() * ldlt.solve(r2);
    }
    schur = (0.5 * (schur + schur.transpose())).eval();
    SymEigen es = sym_eigen_desc(schur);
    const Eigen::Index room = k - r;
    for (Eigen::Index i = 0; i < es.values.size(); ++i) {
      if (es.values(i) < -tol.residual_abs) throw Error(ErrorKind::NotPSD, "Schur complement is not PSD");
      if (i >= room && es.values(i) > tol.residual_abs)
        throw Error(ErrorKind::RankInfeasible, "Schur complement rank exceeds k - r");
    }
    Matrix nmat = Matrix::Zero(room, n - r);
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(room, n - r); ++i)
      nmat.row(i) = std::sqrt(std::max(es.values(i), 0.0)) * es.vectors.col(i).transpose();
    Matrix q;
    if (r > 0) {
      SubspaceBasis nq = null_space(m1, tol);
      if (nq.dim != room) throw Error(ErrorKind::NumericalFailure, "null space of W̄1 + A1 has unexpected dimension");
      q = nq.columns;
    } else {
      q = Matrix::Identity(k, k);
    }
    a2t = m1_pinv * r2 + q * nmat;
  }
  Matrix abar(n, k);
  abar.topRows(r) = a1;
  abar.bottomRows(n - r) = a2t.transpose();

  SymRealizationWitness out;
  out.A_eps = u * abar;
  out.rank = r;
  out.residual = ((w + out.A_eps) * (w + out.A_eps).transpose() - st).norm();
  out.a_norm = out.A_eps.norm();
  out.input_delta = (st - w * w.transpose()).norm();
  if (r > 0) {
    out.sigma_min = ew.values(r - 1);
    out.bound = out.input_delta * bm_bound_coefficient(r, *out.sigma_min);
  }
  if (!std::isfinite(out.residual) || !std::isfinite(out.a_norm))
    throw Error(ErrorKind::NumericalFailure, "symmetric realization produced non-finite values");
  return out;
}

struct BmCertificate {
  bool open = true;
  int rank = 0;
  std::optional<double> sigma_min;
  std::optional<double> bound_coefficient;
  std::optional<double> delta0;  // σ_min / 2
  bool degenerate_bound = false;  // W = 0: only a √δ-type bound
  std::string statement;
};

inline BmCertificate certify_bm_transfer(const Matrix& w, const Tolerances& tol = {}) {
  require_finite(w, "W");
  BmCertificate c;
  c.rank = rank(w, tol);
  if (c.rank > 0) {
    SymEigen ew = sym_eigen_desc(w * w.transpose());
    c.sigma_min = ew.values(c.rank - 1);
    c.bound_coefficient = bm_bound_coefficient(c.rank, *c.sigma_min);
    c.delta0 = *c.sigma_min / 2.0;
  } else {
    c.degenerate_bound = true;
  }
  c.statement =
      "W -> W W^T is open at W relative to the PSD matrices of rank <= k; every local minimum of l(W W^T) "
      "maps to a local minimum of l(Z) over that set";
  return c;
}

}  // namespace openmap
