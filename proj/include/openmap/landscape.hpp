#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "openmap/numeric.hpp"
#include "openmap/random.hpp"

namespace openmap {

enum class LossKind { SquaredError, ConvexPlugin };

// A convex loss on the network output, given as value and gradient.
struct ConvexLoss {
  std::function<double(const Matrix&)> value;
  std::function<Matrix(const Matrix&)> gradient;
};

struct NetworkSpec {
  std::vector<int> dims;  // d_h, ..., d_1, d_0
  int n_samples = 0;
  LossKind loss = LossKind::SquaredError;
  ConvexLoss plugin;

  int depth() const { return static_cast<int>(dims.size()) - 1; }
  // Width d_k, k = 0..h.
  int width(int k) const { return dims[static_cast<std::size_t>(depth() - k)]; }
  int dp() const { return *std::min_element(dims.begin(), dims.end()); }

  void validate() const {
    if (dims.size() < 2) throw Error(ErrorKind::InvalidInput, "dims needs at least d_1 and d_0");
    for (int d : dims)
      if (d < 1) throw Error(ErrorKind::InvalidInput, "all widths must be >= 1");
    if (n_samples < 1) throw Error(ErrorKind::InvalidInput, "n_samples must be >= 1");
    if (loss == LossKind::ConvexPlugin && (!plugin.value || !plugin.gradient))
      throw Error(ErrorKind::InvalidInput, "a plugin loss needs value and gradient callables");
  }
};

struct NetworkPoint {
  std::vector<Matrix> weights;  // W_h first
  Matrix X;
  Matrix Y;

  int depth() const { return static_cast<int>(weights.size()); }
  // Layer k in 1..h.
  const Matrix& layer(int k) const { return weights[static_cast<std::size_t>(depth() - k)]; }
  Matrix& layer(int k) { return weights[static_cast<std::size_t>(depth() - k)]; }
};

inline NetworkSpec spec_of(const NetworkPoint& pt) {
  NetworkSpec s;
  for (const auto& w : pt.weights) s.dims.push_back(static_cast<int>(w.rows()));
  if (!pt.weights.empty()) s.dims.push_back(static_cast<int>(pt.weights.back().cols()));
  s.n_samples = static_cast<int>(pt.X.cols());
  return s;
}

inline void validate_point(const NetworkPoint& pt, const NetworkSpec& spec) {
  spec.validate();
  const int h = spec.depth();
  if (pt.depth() != h) throw Error(ErrorKind::InvalidInput, "number of weight matrices must equal h");
  for (int k = 1; k <= h; ++k) {
    const Matrix& w = pt.layer(k);
    if (w.rows() != spec.width(k) || w.cols() != spec.width(k - 1))
      throw Error(ErrorKind::InvalidInput, "W_" + std::to_string(k) + " must be d_k x d_(k-1)");
    require_finite(w, "weight");
  }
  if (pt.X.rows() != spec.width(0) || pt.X.cols() != spec.n_samples)
    throw Error(ErrorKind::InvalidInput, "X must be d_0 x n");
  if (spec.loss == LossKind::SquaredError && (pt.Y.rows() != spec.width(h) || pt.Y.cols() != spec.n_samples))
    throw Error(ErrorKind::InvalidInput, "Y must be d_h x n");
  require_finite(pt.X, "X");
  require_finite(pt.Y, "Y");
}

// W_hi ... W_lo; the identity of size d_(lo-1) when hi < lo.
inline Matrix chain_product(const std::vector<Matrix>& lay, int hi, int lo) {
  Matrix p = Matrix::Identity(lay[static_cast<std::size_t>(lo)].cols(), lay[static_cast<std::size_t>(lo)].cols());
  for (int k = lo; k <= hi; ++k) p = lay[static_cast<std::size_t>(k)] * p;
  return p;
}

// Layers indexed 1..h (entry 0 unused).
inline std::vector<Matrix> layers_of(const NetworkPoint& pt) {
  std::vector<Matrix> lay(static_cast<std::size_t>(pt.depth()) + 1);
  for (int k = 1; k <= pt.depth(); ++k) lay[static_cast<std::size_t>(k)] = pt.layer(k);
  return lay;
}

inline Matrix network_product(const NetworkPoint& pt) { return chain_product(layers_of(pt), pt.depth(), 1); }

inline double loss_value(const NetworkSpec& spec, const Matrix& out, const Matrix& y) {
  if (spec.loss == LossKind::ConvexPlugin) return spec.plugin.value(out);
  return 0.5 * (out - y).squaredNorm();
}

inline Matrix loss_gradient(const NetworkSpec& spec, const Matrix& out, const Matrix& y) {
  if (spec.loss == LossKind::ConvexPlugin) return spec.plugin.gradient(out);
  return out - y;
}

inline double objective(const NetworkPoint& pt, const NetworkSpec& spec) {
  return loss_value(spec, network_product(pt) * pt.X, pt.Y);
}
inline double objective(const NetworkPoint& pt) { return objective(pt, spec_of(pt)); }

// Layer gradients, W_h first.
inline std::vector<Matrix> gradient(const NetworkPoint& pt, const NetworkSpec& spec) {
  const int h = pt.depth();
  std::vector<Matrix> below(static_cast<std::size_t>(h) + 2);  // below[k] = W_(k-1) ... W_1 X
  below[1] = pt.X;
  for (int k = 1; k <= h; ++k) below[static_cast<std::size_t>(k) + 1] = pt.layer(k) * below[static_cast<std::size_t>(k)];
  const Matrix g = loss_gradient(spec, below[static_cast<std::size_t>(h) + 1], pt.Y);
  std::vector<Matrix> out(static_cast<std::size_t>(h));
  Matrix upper_t = g;  // (W_h ... W_(k+1))ᵀ G
  for (int k = h; k >= 1; --k) {
    out[static_cast<std::size_t>(h - k)] = upper_t * below[static_cast<std::size_t>(k)].transpose();
    upper_t = pt.layer(k).transpose() * upper_t;
  }
  return out;
}
inline std::vector<Matrix> gradient(const NetworkPoint& pt) { return gradient(pt, spec_of(pt)); }

inline double tuple_norm(const std::vector<Matrix>& ms) {
  double s = 0.0;
  for (const auto& m : ms) s += m.squaredNorm();
  return std::sqrt(s);
}

// Optimal value over products of rank <= d_p (squared loss only).
inline double global_value(const NetworkSpec& spec, const Matrix& x, const Matrix& y, const Tolerances& tol = {}) {
  if (spec.loss != LossKind::SquaredError) return std::numeric_limits<double>::quiet_NaN();
  Svd dx = svd(x);
  const int rx = rank_from_singular_values(dx.S, rank_cutoff(dx.S, x.rows(), x.cols(), tol));
  const Matrix yv = y * dx.V;
  const double constant = 0.5 * yv.rightCols(yv.cols() - rx).squaredNorm();
  if (rx == 0) return constant;
  Svd dy = svd(yv.leftCols(rx));
  const int keep = std::min(spec.dp(), rx);
  double tail = 0.0;
  for (Eigen::Index i = keep; i < dy.S.size(); ++i) tail += dy.S(i) * dy.S(i);
  return constant + 0.5 * tail;
}

// ---------------------------------------------------------------------------
// Sampling probe

struct ProbeRadius {
  double radius = 0.0;
  double min_diff = 0.0;  // min over samples of f(w + r u) - f(w)
  int samples = 0;
};

struct ProbeReport {
  double base_value = 0.0;
  std::vector<ProbeRadius> radii;
  bool locally_minimal = true;
};

// Probe of f around x0 on spheres of the configured radii.
inline ProbeReport local_min_probe(const std::function<double(const Vector&)>& f, const Vector& x0,
                                   const Tolerances& tol = {}) {
  ProbeReport rep;
  rep.base_value = f(x0);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t ri = 0; ri < tol.probe_radius_schedule.size(); ++ri) {
    const double r = tol.probe_radius_schedule[ri];
    Rng rng(derive_seed(tol.rng_seed, 0x9e0000ULL + ri));
    ProbeRadius pr;
    pr.radius = r;
    pr.samples = tol.probe_samples;
    pr.min_diff = std::numeric_limits<double>::infinity();
    Vector u(x0.size());
    for (int s = 0; s < tol.probe_samples; ++s) {
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = nd(rng);
      const double nu = u.norm();
      if (nu == 0.0) continue;
      pr.min_diff = std::min(pr.min_diff, f(x0 + (r / nu) * u) - rep.base_value);
    }
    if (pr.min_diff < -tol.residual_abs) rep.locally_minimal = false;
    rep.radii.push_back(pr);
  }
  return rep;
}

inline Vector flatten(const std::vector<Matrix>& ms) {
  Eigen::Index total = 0;
  for (const auto& m : ms) total += m.size();
  Vector v(total);
  Eigen::Index o = 0;
  for (const auto& m : ms) {
    v.segment(o, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    o += m.size();
  }
  return v;
}

inline std::vector<Matrix> unflatten(const Vector& v, const std::vector<Matrix>& shapes) {
  std::vector<Matrix> out;
  Eigen::Index o = 0;
  for (const auto& s : shapes) {
    out.push_back(Eigen::Map<const Matrix>(v.data() + o, s.rows(), s.cols()));
    o += s.size();
  }
  return out;
}

inline ProbeReport local_min_probe(const NetworkPoint& pt, const NetworkSpec& spec, const Tolerances& tol = {}) {
  validate_point(pt, spec);
  NetworkPoint work = pt;
  auto f = [&](const Vector& v) {
    work.weights = unflatten(v, pt.weights);
    return objective(work, spec);
  };
  return local_min_probe(f, flatten(pt.weights), tol);
}

// ---------------------------------------------------------------------------
// Directions along which the loss decreases

enum class ConstructionCase { TwoLayerNullW2, TwoLayerNullW1T, DeepCaseA, DeepCaseB, DeepCaseA_left, DeepCaseB_left };

inline const char* to_string(ConstructionCase c) {
  switch (c) {
    case ConstructionCase::TwoLayerNullW2: return "TwoLayerNullW2";
    case ConstructionCase::TwoLayerNullW1T: return "TwoLayerNullW1T";
    case ConstructionCase::DeepCaseA: return "DeepCaseA";
    case ConstructionCase::DeepCaseB: return "DeepCaseB";
    case ConstructionCase::DeepCaseA_left: return "DeepCaseA_left";
    case ConstructionCase::DeepCaseB_left: return "DeepCaseB_left";
  }
  return "Unknown";
}

struct DirectionTuple {
  std::vector<Matrix> directions;  // A_h first
  int order = 0;
  double step = 0.0;
  double decrease = 0.0;  // g(0) - g(step)
  ConstructionCase construction_case = ConstructionCase::TwoLayerNullW2;
};

// Matrix coefficients M_0..M_h of (W_h + tA_h) ... (W_1 + tA_1) X, with Y
// subtracted from M_0. Layers indexed 1..h.
inline std::vector<Matrix> path_polynomial(const std::vector<Matrix>& lay, const std::vector<Matrix>& dir,
                                           const Matrix& x, const Matrix& y) {
  const int h = static_cast<int>(lay.size()) - 1;
  std::vector<Matrix> poly{x};
  for (int k = 1; k <= h; ++k) {
    const Matrix& w = lay[static_cast<std::size_t>(k)];
    const Matrix& a = dir[static_cast<std::size_t>(k)];
    std::vector<Matrix> next(poly.size() + 1, Matrix::Zero(w.rows(), x.cols()));
    for (std::size_t e = 0; e < poly.size(); ++e) {
      next[e] += w * poly[e];
      next[e + 1] += a * poly[e];
    }
    poly = std::move(next);
  }
  poly[0] -= y;
  return poly;
}

// Coefficients of g(t) = ½‖Σ t^e M_e‖².
inline std::vector<double> loss_polynomial(const std::vector<Matrix>& m) {
  std::vector<double> c(2 * m.size() - 1, 0.0);
  for (std::size_t a = 0; a < m.size(); ++a)
    for (std::size_t b = 0; b < m.size(); ++b) c[a + b] += 0.5 * (m[a].array() * m[b].array()).sum();
  return c;
}

namespace detail {

// Building blocks of the Appendix D direction on layers 1..h of a network
// whose top layer has a non-trivial null space.
struct Chain {
  bool ok = false;
  std::string failure;
  int kstar = 0;
  std::vector<Matrix> interior;  // A_2..A_(h-1), indexed by layer
  Vector b1;                     // column direction of A_1
  Vector ph;                     // row direction of A_h
  double c = 0.0;                // p_hᵀb_(h-1) ... p_(k*+1)ᵀb_(k*) bᵀb
};

inline constexpr double kOrthogonalityTol = 1e-8;

inline Chain build_chain(const std::vector<Matrix>& lay, const Tolerances& tol) {
  const int h = static_cast<int>(lay.size()) - 1;
  Chain ch;
  ch.interior.assign(static_cast<std::size_t>(h) + 1, Matrix());
  for (int k = 2; k < h; ++k)
    ch.interior[static_cast<std::size_t>(k)] =
        Matrix::Zero(lay[static_cast<std::size_t>(k)].rows(), lay[static_cast<std::size_t>(k)].cols());
  std::vector<Vector> p(static_cast<std::size_t>(h) + 1), b(static_cast<std::size_t>(h) + 1);
  ch.c = 1.0;
  int kstar = 0;
  for (int k = h; k >= 2; --k) {
    SubspaceBasis nw = null_space(lay[static_cast<std::size_t>(k)], tol);
    SubspaceBasis np = null_space(Matrix(chain_product(lay, k - 1, 2).transpose()), tol);
    if (nw.dim == 0) {
      ch.failure = "N(W_" + std::to_string(k) + ") is trivial";
      return ch;
    }
    double overlap = 0.0;
    Svd cross;
    if (np.dim > 0) {
      cross = svd(Matrix(nw.columns.transpose() * np.columns));
      overlap = cross.S(0);
    }
    if (overlap <= kOrthogonalityTol) {
      kstar = k;
      break;
    }
    b[static_cast<std::size_t>(k) - 1] = nw.columns * cross.U.col(0);
    p[static_cast<std::size_t>(k)] = np.columns * cross.V.col(0);
    ch.c *= p[static_cast<std::size_t>(k)].dot(b[static_cast<std::size_t>(k) - 1]);
  }
  // N(W_k*) lies in C(W_(k*-1) ... W_2).
  const Vector bvec = null_space(lay[static_cast<std::size_t>(kstar)], tol).columns.col(0);
  const Matrix pk = chain_product(lay, kstar - 1, 2);
  ch.b1 = pk.completeOrthogonalDecomposition().solve(bvec);
  if ((pk * ch.b1 - bvec).norm() > 1e-8) {
    ch.failure = "null vector of W_k* is not in the column space of the lower chain";
    return ch;
  }
  for (int k = kstar + 1; k <= h - 1; ++k)
    ch.interior[static_cast<std::size_t>(k)] = b[static_cast<std::size_t>(k)] * p[static_cast<std::size_t>(k)].transpose();
  if (kstar <= h - 1) ch.interior[static_cast<std::size_t>(kstar)] = b[static_cast<std::size_t>(kstar)] * bvec.transpose();
  ch.ph = kstar < h ? p[static_cast<std::size_t>(h)] : bvec;
  ch.kstar = kstar;
  ch.ok = true;
  return ch;
}

// Direction family with one scalar on the end layer that enters the leading
// term ("lead") and one on the end layer that only enters the next one
// ("tail").
struct DirectionFamily {
  std::vector<Matrix> base;  // indexed by layer, ends zero
  int lead_layer = 0, tail_layer = 0;
  Matrix lead_unit, tail_unit;
  ConstructionCase which = ConstructionCase::TwoLayerNullW2;

  std::vector<Matrix> at(double lead, double tail) const {
    std::vector<Matrix> d = base;
    d[static_cast<std::size_t>(lead_layer)] = lead * lead_unit;
    d[static_cast<std::size_t>(tail_layer)] = tail * tail_unit;
    return d;
  }
};

inline DirectionFamily right_family(const std::vector<Matrix>& lay, const Chain& ch, int i, int j) {
  const int h = static_cast<int>(lay.size()) - 1;
  DirectionFamily f;
  f.base = ch.interior;
  f.base[0] = Matrix();
  f.lead_layer = h;
  f.tail_layer = 1;
  f.lead_unit = Matrix::Zero(lay[static_cast<std::size_t>(h)].rows(), lay[static_cast<std::size_t>(h)].cols());
  f.lead_unit.row(j) = ch.ph.transpose();
  f.tail_unit = Matrix::Zero(lay[1].rows(), lay[1].cols());
  f.tail_unit.col(i) = ch.b1;
  if (h == 2)
    f.which = ConstructionCase::TwoLayerNullW2;
  else
    f.which = ch.kstar >= 3 ? ConstructionCase::DeepCaseA : ConstructionCase::DeepCaseB;
  return f;
}

// Mirror image: the chain is built on V_k = W_(h+1-k)ᵀ.
inline DirectionFamily left_family(const std::vector<Matrix>& lay, const Chain& ch, int i, int j) {
  const int h = static_cast<int>(lay.size()) - 1;
  DirectionFamily f;
  f.base.assign(static_cast<std::size_t>(h) + 1, Matrix());
  for (int k = 2; k < h; ++k)
    f.base[static_cast<std::size_t>(k)] = ch.interior[static_cast<std::size_t>(h + 1 - k)].transpose();
  f.lead_layer = 1;
  f.tail_layer = h;
  f.lead_unit = Matrix::Zero(lay[1].rows(), lay[1].cols());
  f.lead_unit.col(i) = ch.ph;
  f.tail_unit = Matrix::Zero(lay[static_cast<std::size_t>(h)].rows(), lay[static_cast<std::size_t>(h)].cols());
  f.tail_unit.row(j) = ch.b1.transpose();
  if (h == 2)
    f.which = ConstructionCase::TwoLayerNullW1T;
  else
    f.which = ch.kstar >= 3 ? ConstructionCase::DeepCaseA_left : ConstructionCase::DeepCaseB_left;
  return f;
}

// Lowest order whose coefficient is above the noise floor, with that
// coefficient; order 0 when all vanish.
inline std::pair<int, double> leading_coefficient(const std::vector<double>& c, double noise) {
  for (std::size_t e = 1; e < c.size(); ++e)
    if (std::abs(c[e]) > noise) return {static_cast<int>(e), c[e]};
  return {0, 0.0};
}

}  // namespace detail

// Reduction of a network by merging a full-column-rank group into the group
// above it or a full-row-rank group into the group below. Each group keeps a
// linear lift sending a direction on its product to layer directions with
// exactly that first-order change and no higher-order terms.
struct ReducedNetwork {
  std::vector<Matrix> lay;  // 1..h'
  std::vector<std::function<void(const Matrix&, std::vector<Matrix>&)>> lift;  // 1..h', into layers 1..h
  std::vector<std::pair<int, int>> groups;  // original layer range (lo, hi) per group
};

inline ReducedNetwork reduce_network(const NetworkPoint& pt, const Tolerances& tol) {
  ReducedNetwork rn;
  const int h = pt.depth();
  rn.lay = layers_of(pt);
  rn.lift.resize(static_cast<std::size_t>(h) + 1);
  rn.groups.resize(static_cast<std::size_t>(h) + 1);
  for (int k = 1; k <= h; ++k) {
    rn.lift[static_cast<std::size_t>(k)] = [k](const Matrix& a, std::vector<Matrix>& out) {
      out[static_cast<std::size_t>(k)] += a;
    };
    rn.groups[static_cast<std::size_t>(k)] = {k, k};
  }
  auto erase = [&](int idx) {
    rn.lay.erase(rn.lay.begin() + idx);
    rn.lift.erase(rn.lift.begin() + idx);
    rn.groups.erase(rn.groups.begin() + idx);
  };
  bool changed = true;
  while (changed && rn.lay.size() > 3) {
    changed = false;
    const int hh = static_cast<int>(rn.lay.size()) - 1;
    for (int i = 1; i <= hh - 1 && !changed; ++i) {
      const Matrix& z = rn.lay[static_cast<std::size_t>(i)];
      if (z.cols() <= z.rows() && rank(z, tol) == z.cols()) {
        // (Z_(i+1) + t A L) Z_i = Z_(i+1) Z_i + t A
        const Matrix left = detail::left_inverse(z);
        auto up = rn.lift[static_cast<std::size_t>(i) + 1];
        rn.lift[static_cast<std::size_t>(i) + 1] = [up, left](const Matrix& a, std::vector<Matrix>& out) {
          up(Matrix(a * left), out);
        };
        rn.lay[static_cast<std::size_t>(i) + 1] = rn.lay[static_cast<std::size_t>(i) + 1] * z;
        rn.groups[static_cast<std::size_t>(i) + 1].first = rn.groups[static_cast<std::size_t>(i)].first;
        erase(i);
        changed = true;
      }
    }
    for (int i = 2; i <= hh && !changed; ++i) {
      const Matrix& z = rn.lay[static_cast<std::size_t>(i)];
      if (z.rows() <= z.cols() && rank(z, tol) == z.rows()) {
        // Z_i (Z_(i-1) + t R A) = Z_i Z_(i-1) + t A
        const Matrix right = detail::right_inverse(z);
        auto down = rn.lift[static_cast<std::size_t>(i) - 1];
        rn.lift[static_cast<std::size_t>(i) - 1] = [down, right](const Matrix& a, std::vector<Matrix>& out) {
          down(Matrix(right * a), out);
        };
        rn.lay[static_cast<std::size_t>(i) - 1] = z * rn.lay[static_cast<std::size_t>(i) - 1];
        rn.groups[static_cast<std::size_t>(i) - 1].second = rn.groups[static_cast<std::size_t>(i)].second;
        erase(i);
        changed = true;
      }
    }
  }
  return rn;
}

struct Certificate {
  std::string name;
  bool passed = false;
  std::string detail;
};

enum class CriticalStatus { GlobalMin, SecondOrderSaddle, SaddleHigherOrder, SpuriousLocalMin, NotCritical, Inconclusive };

inline const char* to_string(CriticalStatus s) {
  switch (s) {
    case CriticalStatus::GlobalMin: return "GlobalMin";
    case CriticalStatus::SecondOrderSaddle: return "SecondOrderSaddle";
    case CriticalStatus::SaddleHigherOrder: return "SaddleHigherOrder";
    case CriticalStatus::SpuriousLocalMin: return "SpuriousLocalMin";
    case CriticalStatus::NotCritical: return "NotCritical";
    case CriticalStatus::Inconclusive: return "Inconclusive";
  }
  return "Unknown";
}

struct ClassificationReport {
  CriticalStatus status = CriticalStatus::Inconclusive;
  bool degenerate = false;
  double gradient_norm = 0.0;
  double objective = 0.0;
  double global_value = 0.0;  // NaN for plugin losses
  int product_rank = 0;
  int reduced_depth = 0;
  std::optional<DirectionTuple> descent_direction;
  std::optional<ProbeReport> probe;
  std::vector<Certificate> certificates;
};

// Searches the two scalars of a direction family for a verified decrease.
inline std::optional<DirectionTuple> verify_family(const detail::DirectionFamily& fam, const ReducedNetwork& rn,
                                                   const NetworkPoint& pt, const NetworkSpec& spec, double base,
                                                   double grad_norm, const Tolerances& tol, std::string& why) {
  const int h = static_cast<int>(rn.lay.size()) - 1;
  const Matrix& x = pt.X;
  const Matrix y = spec.loss == LossKind::SquaredError ? pt.Y : Matrix::Zero(rn.lay[static_cast<std::size_t>(h)].rows(), x.cols());
  const Matrix g0 =
      loss_gradient(spec, chain_product(rn.lay, h, 1) * x, pt.Y);  // Δ for the squared loss

  auto coefficients = [&](const std::vector<Matrix>& d) {
    std::vector<Matrix> m = path_polynomial(rn.lay, d, x, y);
    if (spec.loss == LossKind::SquaredError) return loss_polynomial(m);
    // First-order model of the loss along the output path.
    std::vector<double> c(m.size(), 0.0);
    for (std::size_t e = 1; e < m.size(); ++e) c[e] = (m[e].array() * g0.array()).sum();
    return c;
  };
  auto noise_floor = [&](const std::vector<Matrix>& d) {
    double scale = 0.0;
    for (std::size_t k = 1; k < d.size(); ++k) scale += d[k].norm();
    double out_scale = x.norm();
    for (std::size_t k = 1; k < rn.lay.size(); ++k) out_scale *= 1.0 + rn.lay[k].norm() + d[k].norm();
    return 1e-8 * std::max(1.0, out_scale * out_scale) + 4.0 * grad_norm * std::max(1.0, scale) * out_scale;
  };
  auto lifted = [&](const std::vector<Matrix>& d) {
    std::vector<Matrix> out(static_cast<std::size_t>(pt.depth()) + 1);
    for (int k = 1; k <= pt.depth(); ++k) out[static_cast<std::size_t>(k)] = Matrix::Zero(pt.layer(k).rows(), pt.layer(k).cols());
    for (int k = 1; k <= h; ++k) rn.lift[static_cast<std::size_t>(k)](d[static_cast<std::size_t>(k)], out);
    return out;
  };
  const double thr = std::max(tol.residual_abs, 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base)));
  auto try_candidate = [&](double lead, double tail) -> std::optional<DirectionTuple> {
    const std::vector<Matrix> d = fam.at(lead, tail);
    auto [order, coef] = detail::leading_coefficient(coefficients(d), noise_floor(d));
    if (order == 0 || coef >= 0.0) return std::nullopt;
    const std::vector<Matrix> a = lifted(d);
    NetworkPoint trial = pt;
    double t = 1.0;
    for (int halving = 0; halving <= 60; ++halving, t *= 0.5) {
      for (int k = 1; k <= pt.depth(); ++k) trial.layer(k) = pt.layer(k) + t * a[static_cast<std::size_t>(k)];
      const double v = objective(trial, spec);
      if (v < base - thr) {
        DirectionTuple dt;
        for (int k = pt.depth(); k >= 1; --k) dt.directions.push_back(a[static_cast<std::size_t>(k)]);
        dt.order = order;
        dt.step = t;
        dt.decrease = base - v;
        dt.construction_case = fam.which;
        return dt;
      }
    }
    return std::nullopt;
  };

  for (double lead : {1.0, -1.0}) {
    if (auto r = try_candidate(lead, 0.0)) return r;
    // Tail scalar from the sign/magnitude rule on the first order where it
    // appears; the dependence on it is linear there.
    const std::vector<double> c0 = coefficients(fam.at(lead, 0.0));
    const std::vector<double> c1 = coefficients(fam.at(lead, 1.0));
    int e0 = 0;
    double slope = 0.0;
    for (std::size_t e = 1; e < c0.size(); ++e)
      if (std::abs(c1[e] - c0[e]) > 1e-12 * std::max(1.0, std::abs(c0[e]))) {
        e0 = static_cast<int>(e);
        slope = c1[e] - c0[e];
        break;
      }
    if (e0 == 0) continue;
    const double c_alpha = c0[static_cast<std::size_t>(e0)];
    const double tail = -(slope > 0 ? 1.0 : -1.0) * 2.0 * (std::abs(c_alpha) + 1.0) / std::abs(slope);
    if (auto r = try_candidate(lead, tail)) return r;
    double mag = 1.0;
    for (int p = 0; p <= 10; ++p, mag *= 4.0)
      for (double sgn : {1.0, -1.0})
        if (auto r = try_candidate(lead, sgn * mag)) return r;
  }
  why = std::string(to_string(fam.which)) + ": no scalar choice gave a verified decrease";
  return std::nullopt;
}

inline std::optional<DirectionTuple> construct_descent(const ReducedNetwork& rn, const NetworkPoint& pt,
                                                       const NetworkSpec& spec, double base, double grad_norm,
                                                       const Tolerances& tol, std::vector<Certificate>& certs) {
  const int h = static_cast<int>(rn.lay.size()) - 1;
  if (h < 2) return std::nullopt;
  const Matrix out = chain_product(rn.lay, h, 1) * pt.X;
  const Matrix gx = loss_gradient(spec, out, pt.Y) * pt.X.transpose();  // (j, i) entry is ⟨X_i, Δ_j⟩
  Eigen::Index j = 0, i = 0;
  const double s = gx.cwiseAbs().maxCoeff(&j, &i);
  if (s <= tol.grad_abs) {
    certs.push_back({"DirectionConstructionFailed", false, "all <X_i, Delta_j> are below tolerance"});
    return std::nullopt;
  }
  const bool right_ok = null_space(rn.lay[static_cast<std::size_t>(h)], tol).dim > 0;
  const bool left_ok = null_space(Matrix(rn.lay[1].transpose()), tol).dim > 0;
  std::vector<std::string> reasons;
  for (int side = 0; side < 2; ++side) {
    if ((side == 0 && !right_ok) || (side == 1 && !left_ok)) continue;
    std::vector<Matrix> v = rn.lay;
    if (side == 1)
      for (int k = 1; k <= h; ++k) v[static_cast<std::size_t>(k)] = rn.lay[static_cast<std::size_t>(h + 1 - k)].transpose();
    detail::Chain ch = detail::build_chain(v, tol);
    if (!ch.ok) {
      reasons.push_back((side == 0 ? "right chain: " : "left chain: ") + ch.failure);
      continue;
    }
    detail::DirectionFamily fam = side == 0 ? detail::right_family(rn.lay, ch, static_cast<int>(i), static_cast<int>(j))
                                            : detail::left_family(rn.lay, ch, static_cast<int>(i), static_cast<int>(j));
    std::string why;
    if (auto dt = verify_family(fam, rn, pt, spec, base, grad_norm, tol, why)) {
      certs.push_back({"descent_direction", true,
                       std::string(to_string(dt->construction_case)) + " order " + std::to_string(dt->order)});
      return dt;
    }
    reasons.push_back(why);
  }
  if (!right_ok && !left_ok) reasons.push_back("N(W_h) and N(W_1^T) are both trivial after reduction");
  std::string detail;
  for (const auto& r : reasons) detail += (detail.empty() ? "" : "; ") + r;
  certs.push_back({"DirectionConstructionFailed", false, detail});
  return std::nullopt;
}

inline ClassificationReport classify(const NetworkPoint& pt, const NetworkSpec& spec, const Tolerances& tol = {}) {
  validate_point(pt, spec);
  tol.validate();
  ClassificationReport rep;
  const bool squared = spec.loss == LossKind::SquaredError;
  rep.objective = objective(pt, spec);
  rep.gradient_norm = tuple_norm(gradient(pt, spec));
  rep.global_value = global_value(spec, pt.X, pt.Y, tol);
  const Matrix prod = network_product(pt);
  rep.product_rank = rank(prod, tol);
  rep.degenerate = rep.product_rank < spec.dp();
  rep.reduced_depth = pt.depth();
  if (rep.gradient_norm > tol.grad_abs) {
    rep.status = CriticalStatus::NotCritical;
    return rep;
  }
  if (squared && rep.objective <= rep.global_value + tol.residual_abs) {
    rep.certificates.push_back({"objective_at_global_value", true, ""});
    rep.status = CriticalStatus::GlobalMin;
    return rep;
  }
  const Matrix g = loss_gradient(spec, prod * pt.X, pt.Y);
  const double gxt = (g * pt.X.transpose()).norm();
  if (gxt <= tol.grad_abs) {
    rep.certificates.push_back({"loss_gradient_orthogonal_to_X", true, ""});
    if (!squared) {
      rep.status = CriticalStatus::GlobalMin;
      return rep;
    }
    rep.certificates.push_back({"objective_at_global_value", false, "first-order condition holds but the gap exceeds residual_abs"});
    rep.status = CriticalStatus::Inconclusive;
    return rep;
  }
  if (rank_is_ambiguous(prod, tol))
    rep.certificates.push_back({"product_rank_unambiguous", false, "a singular value of the product lies near the cutoff"});

  if (!rep.degenerate) {
    // The product map is open here, so a local minimum would be global.
    rep.certificates.push_back({"product_map_open", true, "non-degenerate point"});
    rep.probe = local_min_probe(pt, spec, tol);
    if (!squared && rep.probe->locally_minimal) {
      rep.status = CriticalStatus::GlobalMin;
      return rep;
    }
    rep.certificates.push_back({"non_global_critical_point", !rep.probe->locally_minimal,
                                rep.probe->locally_minimal ? "probe found no decrease at a non-global non-degenerate point"
                                                           : "probe found a decrease"});
    rep.status = CriticalStatus::Inconclusive;
    return rep;
  }

  ReducedNetwork rn = reduce_network(pt, tol);
  rep.reduced_depth = static_cast<int>(rn.lay.size()) - 1;
  rep.descent_direction = construct_descent(rn, pt, spec, rep.objective, rep.gradient_norm, tol, rep.certificates);
  if (rep.descent_direction) {
    rep.status = rep.descent_direction->order <= 2 ? CriticalStatus::SecondOrderSaddle : CriticalStatus::SaddleHigherOrder;
    return rep;
  }
  rep.probe = local_min_probe(pt, spec, tol);
  if (squared && rep.probe->locally_minimal && rep.objective > rep.global_value + tol.residual_abs)
    rep.status = CriticalStatus::SpuriousLocalMin;
  else
    rep.status = CriticalStatus::Inconclusive;
  return rep;
}

inline ClassificationReport classify(const NetworkPoint& pt, const Tolerances& tol = {}) {
  return classify(pt, spec_of(pt), tol);
}

// ---------------------------------------------------------------------------
// Fixtures

struct Counterexample {
  Matrix X, Y;
  NetworkPoint point;
  int p1 = 0, p2 = 0;
};

// First admissible pair 1 <= p1 < p2 <= h-1 with d_h > d_p2 and d_0 > d_p1.
inline std::optional<std::pair<int, int>> counterexample_pair(const std::vector<int>& dims) {
  const int h = static_cast<int>(dims.size()) - 1;
  auto d = [&](int k) { return dims[static_cast<std::size_t>(h - k)]; };
  for (int p1 = 1; p1 <= h - 1; ++p1)
    for (int p2 = p1 + 1; p2 <= h - 1; ++p2)
      if (d(h) > d(p2) && d(0) > d(p1)) return std::make_pair(p1, p2);
  return std::nullopt;
}

inline Counterexample counterexample_factory(const std::vector<int>& dims, const Tolerances& tol = {}) {
  (void)tol;
  NetworkSpec spec;
  spec.dims = dims;
  spec.n_samples = dims.empty() ? 1 : std::max(dims.back(), 1);
  spec.validate();
  auto pair = counterexample_pair(dims);
  if (!pair)
    throw Error(ErrorKind::NotConstructible,
                "no 1 <= p1 < p2 <= h-1 with d_h > d_p2 and d_0 > d_p1; for these widths every local minimum is "
                "global for any X and Y");
  const int h = spec.depth();
  Counterexample ce;
  ce.p1 = pair->first;
  ce.p2 = pair->second;
  const int d0 = spec.width(0), dh = spec.width(h);
  ce.X = Matrix::Identity(d0, d0);
  ce.Y = Matrix::Zero(dh, d0);
  ce.Y(dh - 1, d0 - 1) = 1.0;
  ce.point.weights.resize(static_cast<std::size_t>(h));
  for (int k = 1; k <= h; ++k) {
    const int rows = spec.width(k), cols = spec.width(k - 1);
    Matrix w = Matrix::Zero(rows, cols);
    if (k <= ce.p1 || k > ce.p2) w.topLeftCorner(std::min(rows, cols), std::min(rows, cols)).setIdentity();
    ce.point.layer(k) = w;
  }
  ce.point.X = ce.X;
  ce.point.Y = ce.Y;
  return ce;
}

// Three-layer point with rank(Y) = 2 above the construction's reach.
inline Counterexample rank_deficient_y_fixture() {
  Counterexample ce;
  Matrix w3(3, 2), w2(2, 2), y(3, 3);
  w3 << 1, -1, -1, -1, 1, -1;
  w2 << 1, 1, 1, 1;
  y << 1, 0, -1, 0, 4, 0, -1, 0, 1;
  ce.X = Matrix::Identity(3, 3);
  ce.Y = y;
  ce.point.weights = {w3, w2, Matrix(w3.transpose())};
  ce.point.X = ce.X;
  ce.point.Y = ce.Y;
  return ce;
}

inline Counterexample intro_fixture() { return counterexample_factory({2, 1, 1, 2}); }

// ---------------------------------------------------------------------------
// Pyramidal networks with monotone activations

enum class ActivationKind { Identity, LeakyRelu, Tanh, Logistic, Relu };

struct ActivationSpec {
  ActivationKind kind = ActivationKind::Identity;
  double slope = 0.01;  // negative-side slope of the leaky ReLU

  double operator()(double v) const {
    switch (kind) {
      case ActivationKind::Identity: return v;
      case ActivationKind::LeakyRelu: return v >= 0 ? v : slope * v;
      case ActivationKind::Tanh: return std::tanh(v);
      case ActivationKind::Logistic: return 1.0 / (1.0 + std::exp(-v));
      case ActivationKind::Relu: return v >= 0 ? v : 0.0;
    }
    return v;
  }

  void validate() const {
    if (kind == ActivationKind::Relu)
      throw Error(ErrorKind::UnsupportedActivation, "ReLU is not strictly monotone");
    if (kind == ActivationKind::LeakyRelu && !(slope > 0.0) )
      throw Error(ErrorKind::UnsupportedActivation, "leaky ReLU needs a positive slope");
  }
};

// "identity", "tanh", "logistic", "relu", "leaky-relu" or "leaky-relu:<slope>".
inline ActivationSpec parse_activation(const std::string& s) {
  ActivationSpec a;
  if (s == "identity") a.kind = ActivationKind::Identity;
  else if (s == "tanh") a.kind = ActivationKind::Tanh;
  else if (s == "logistic") a.kind = ActivationKind::Logistic;
  else if (s == "relu") a.kind = ActivationKind::Relu;
  else if (s.rfind("leaky-relu", 0) == 0) {
    a.kind = ActivationKind::LeakyRelu;
    if (s.size() > 10) {
      if (s[10] != ':') throw Error(ErrorKind::InvalidInput, "bad activation " + s);
      try {
        a.slope = std::stod(s.substr(11));
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidInput, "bad leaky-relu slope in " + s);
      }
    }
  } else {
    throw Error(ErrorKind::UnsupportedActivation, "unknown activation " + s);
  }
  return a;
}

// F_h: layer by layer σ_k(W_k F_(k-1)) from F_0 = X. Activations W_h first.
inline Matrix pyramidal_forward(const NetworkPoint& pt, const std::vector<ActivationSpec>& acts) {
  if (static_cast<int>(acts.size()) != pt.depth())
    throw Error(ErrorKind::InvalidInput, "one activation per layer is required");
  Matrix f = pt.X;
  for (int k = 1; k <= pt.depth(); ++k) {
    const ActivationSpec& a = acts[static_cast<std::size_t>(pt.depth() - k)];
    f = (pt.layer(k) * f).unaryExpr([&](double v) { return a(v); });
  }
  return f;
}

inline double pyramidal_objective(const NetworkPoint& pt, const std::vector<ActivationSpec>& acts) {
  return 0.5 * (pyramidal_forward(pt, acts) - pt.Y).squaredNorm();
}

struct PyramidalCertificate {
  bool pyramidal_structure = false;  // d_k <= d_(k-1) for all k and d_0 > n
  std::vector<bool> full_row_rank;   // W_h first
  bool x_full_column_rank = false;
  bool locally_open = false;  // every W_k full row rank
  bool certified = false;     // conjunction of all flags
  std::string statement;
};

inline PyramidalCertificate pyramidal_check(const NetworkPoint& pt, const std::vector<ActivationSpec>& acts,
                                            const Tolerances& tol = {}) {
  if (static_cast<int>(acts.size()) != pt.depth())
    throw Error(ErrorKind::InvalidInput, "one activation per layer is required");
  for (const auto& a : acts) a.validate();
  if (pt.depth() < 1) throw Error(ErrorKind::InvalidInput, "at least one layer is required");
  for (int k = 1; k <= pt.depth(); ++k) {
    require_finite(pt.layer(k), "weight");
    if (k > 1 && pt.layer(k).cols() != pt.layer(k - 1).rows())
      throw Error(ErrorKind::InvalidInput, "layer shapes do not chain");
  }
  if (pt.X.rows() != pt.layer(1).cols()) throw Error(ErrorKind::InvalidInput, "X must have d_0 rows");
  PyramidalCertificate c;
  const Eigen::Index n = pt.X.cols();
  c.pyramidal_structure = pt.X.rows() > n;
  c.locally_open = true;
  for (int k = pt.depth(); k >= 1; --k) {
    const Matrix& w = pt.layer(k);
    if (w.rows() > w.cols()) c.pyramidal_structure = false;
    const bool frr = rank(w, tol) == w.rows();
    c.full_row_rank.push_back(frr);
    c.locally_open = c.locally_open && frr;
  }
  c.x_full_column_rank = rank(pt.X, tol) == n;
  c.certified = c.pyramidal_structure && c.locally_open && c.x_full_column_rank;
  c.statement = c.certified ? "F_h is locally open here and, for a convex loss, a local minimum here is global"
                            : "no certificate: a structural or rank condition fails";
  return c;
}

inline ProbeReport pyramidal_probe(const NetworkPoint& pt, const std::vector<ActivationSpec>& acts,
                                   const Tolerances& tol = {}) {
  for (const auto& a : acts) a.validate();
  NetworkPoint work = pt;
  auto f = [&](const Vector& v) {
    work.weights = unflatten(v, pt.weights);
    return pyramidal_objective(work, acts);
  };
  return local_min_probe(f, flatten(pt.weights), tol);
}

}  // namespace openmap
