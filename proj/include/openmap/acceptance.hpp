#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "openmap/harness.hpp"
#include "openmap/landscape.hpp"
#include "openmap/numeric.hpp"
#include "openmap/openness.hpp"
#include "openmap/random.hpp"
#include "openmap/realization.hpp"
#include "openmap/symmetric.hpp"

namespace openmap::acceptance {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  double seconds = 0.0;
  double budget_seconds = 0.0;
  std::vector<std::string> details;
};

struct Options {
  Tolerances tol;
  int jobs = 1;
};

namespace detail {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

inline CriterionResult finish(CriterionResult r, bool ok, const Timer& t) {
  r.seconds = t.seconds();
  r.passed = ok && r.seconds < r.budget_seconds;
  if (r.seconds >= r.budget_seconds) r.details.push_back("runtime budget exceeded");
  return r;
}

// Sign of the first non-zero entry is positive.
inline int canonical_code(const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size() && s == 0.0; ++i) s = v(i) > 0 ? 1.0 : (v(i) < 0 ? -1.0 : 0.0);
  int code = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) code = code * 3 + static_cast<int>(s * v(i) + 1.0);
  return code;
}

// Independent Levenberg–Marquardt oracle for (W + A)(W + A)ᵀ = S.
inline bool symmetric_oracle(const Matrix& w, const Matrix& s, std::uint64_t seed, double residual_abs) {
  const Eigen::Index n = w.rows(), k = w.cols();
  Rng rng(seed);
  for (int attempt = 0; attempt < 4; ++attempt) {
    Matrix a = attempt == 0 ? Matrix::Zero(n, k) : Matrix(1e-2 * std::pow(0.5, attempt) * gaussian_matrix(n, k, rng));
    double lambda = 1e-3;
    auto residual = [&](const Matrix& aa) {
      const Matrix b = w + aa;
      return Matrix(b * b.transpose() - s);
    };
    Matrix f = residual(a);
    for (int it = 0; it < 200 && f.norm() > residual_abs; ++it) {
      const Matrix b = w + a;
      Matrix jac = Matrix::Zero(n * n, n * k);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          for (Eigen::Index c = 0; c < k; ++c) {
            jac(i * n + j, i * k + c) += b(j, c);
            jac(i * n + j, j * k + c) += b(i, c);
          }
      Vector fv(n * n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) fv(i * n + j) = f(i, j);
      bool improved = false;
      for (int inner = 0; inner < 30; ++inner) {
        Matrix sys = jac.transpose() * jac;
        sys.diagonal().array() += lambda;
        Vector dx = -sys.ldlt().solve(jac.transpose() * fv);
        Matrix a2 = a;
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index c = 0; c < k; ++c) a2(i, c) += dx(i * k + c);
        Matrix f2 = residual(a2);
        if (f2.norm() < f.norm()) {
          a = a2;
          f = f2;
          lambda = std::max(lambda * 0.1, 1e-15);
          improved = true;
          break;
        }
        lambda *= 10.0;
      }
      if (!improved) break;
    }
    if (f.norm() <= residual_abs) return true;
  }
  return false;
}

}  // namespace detail

// 1. Three-layer counterexample point.
inline CriterionResult criterion_intro(const Options& opt) {
  detail::Timer t;
  CriterionResult r{1, "intro counterexample: objective 0.5, gradient 0, global 0, probe minimal, SpuriousLocalMin", false, 0, 1.0, {}};
  Counterexample ce = intro_fixture();
  NetworkSpec spec = spec_of(ce.point);
  const double obj = objective(ce.point, spec);
  const double gn = tuple_norm(gradient(ce.point, spec));
  const double gv = global_value(spec, ce.X, ce.Y, opt.tol);
  ProbeReport pr = local_min_probe(ce.point, spec, opt.tol);
  ClassificationReport cr = classify(ce.point, spec, opt.tol);
  bool ok = std::abs(obj - 0.5) <= 1e-12 && gn <= 1e-12 && std::abs(gv) <= 1e-12 && pr.locally_minimal &&
            cr.status == CriticalStatus::SpuriousLocalMin;
  r.details.push_back("objective " + detail::fmt(obj) + ", gradient norm " + detail::fmt(gn) + ", global value " +
                      detail::fmt(gv));
  for (const auto& p : pr.radii)
    r.details.push_back("probe radius " + detail::fmt(p.radius) + ": min difference " + detail::fmt(p.min_diff));
  r.details.push_back(std::string("classify: ") + to_string(cr.status));
  return detail::finish(r, ok, t);
}

// 2. Rank-deficient Y point.
inline CriterionResult criterion_appendix_fixture(const Options& opt) {
  detail::Timer t;
  CriterionResult r{2, "rank-deficient-Y fixture: objective 2, W3^T D = D W1^T = 0, SpuriousLocalMin", false, 0, 1.0, {}};
  Counterexample ce = rank_deficient_y_fixture();
  NetworkSpec spec = spec_of(ce.point);
  const double obj = objective(ce.point, spec);
  const Matrix delta = network_product(ce.point) * ce.X - ce.Y;
  const double left = max_abs(ce.point.layer(3).transpose() * delta);
  const double right = max_abs(delta * ce.point.layer(1).transpose());
  ClassificationReport cr = classify(ce.point, spec, opt.tol);
  bool ok = std::abs(obj - 2.0) <= 1e-12 && left <= 1e-12 && right <= 1e-12 &&
            cr.status == CriticalStatus::SpuriousLocalMin;
  r.details.push_back("objective " + detail::fmt(obj) + ", |W3^T D| " + detail::fmt(left) + ", |D W1^T| " + detail::fmt(right));
  r.details.push_back(std::string("classify: ") + to_string(cr.status));
  return detail::finish(r, ok, t);
}

// 3. Exhaustive {-1,0,1} grid against the recovery probe.
inline CriterionResult criterion_openness_grid(const Options& opt) {
  detail::Timer t;
  CriterionResult r{3, "openness oracle agreement on the {-1,0,1} grid (m,n<=3, k<=2), delta 1e-5, 50 trials", false, 0, 300.0, {}};
  // Signed row permutations of W1 and signed column permutations of W2 keep
  // the verdict, so the probe runs once per orbit.
  struct ClassStats {
    FactorPair rep;
    long open = 0, closed = 0, ill = 0;
    bool probe_open = false;
  };
  std::map<std::vector<int>, int> index;
  std::vector<ClassStats> classes;
  long raw = 0;
  Rng pick(derive_seed(opt.tol.rng_seed, 0x3003));
  std::vector<std::pair<FactorPair, int>> spot;  // raw pairs re-probed directly
  for (int k = 1; k <= 2; ++k)
    for (int m = 1; m <= 3; ++m)
      for (int n = 1; n <= 3; ++n) {
        const int e1 = m * k, e2 = k * n;
        long total = 1;
        for (int i = 0; i < e1 + e2; ++i) total *= 3;
        for (long code = 0; code < total; ++code) {
          long c = code;
          Matrix a(m, k), b(k, n);
          for (int i = 0; i < e1; ++i, c /= 3) a(i / k, i % k) = static_cast<double>(c % 3) - 1.0;
          for (int i = 0; i < e2; ++i, c /= 3) b(i / n, i % n) = static_cast<double>(c % 3) - 1.0;
          std::vector<int> rows, cols;
          for (int i = 0; i < m; ++i) rows.push_back(detail::canonical_code(a.row(i).transpose()));
          for (int j = 0; j < n; ++j) cols.push_back(detail::canonical_code(b.col(j)));
          std::sort(rows.begin(), rows.end());
          std::sort(cols.begin(), cols.end());
          std::vector<int> key{k, m, n};
          key.insert(key.end(), rows.begin(), rows.end());
          key.insert(key.end(), cols.begin(), cols.end());
          auto [it, fresh] = index.emplace(key, static_cast<int>(classes.size()));
          if (fresh) classes.push_back({FactorPair(a, b), 0, 0, 0, false});
          ClassStats& cs = classes[static_cast<std::size_t>(it->second)];
          try {
            if (check_openness(FactorPair(a, b), opt.tol).open)
              ++cs.open;
            else
              ++cs.closed;
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::IllConditioned) throw;
            ++cs.ill;
          }
          if (uniform_int(0, 4095, pick) == 0 && spot.size() < 200) spot.emplace_back(FactorPair(a, b), it->second);
          ++raw;
        }
      }
  const double check_seconds = t.seconds();
  parallel_for(static_cast<int>(classes.size()), opt.jobs, [&](int i) {
    ClassStats& cs = classes[static_cast<std::size_t>(i)];
    cs.probe_open = probe_openness(cs.rep, 1e-5, 50, opt.tol).success_fraction == 1.0;
  });
  long agree = 0, flagged = 0, unflagged = 0;
  for (const auto& cs : classes) {
    agree += cs.probe_open ? cs.open : cs.closed;
    const long dis = cs.probe_open ? cs.closed : cs.open;
    unflagged += dis;
    flagged += cs.ill;
  }
  std::vector<int> spot_ok(spot.size(), 0);
  parallel_for(static_cast<int>(spot.size()), opt.jobs, [&](int i) {
    const auto& [p, ci] = spot[static_cast<std::size_t>(i)];
    const bool direct = probe_openness(p, 1e-5, 50, opt.tol).success_fraction == 1.0;
    spot_ok[static_cast<std::size_t>(i)] = direct == classes[static_cast<std::size_t>(ci)].probe_open;
  });
  long spot_agree = 0;
  for (int v : spot_ok) spot_agree += v;
  const double frac = raw ? static_cast<double>(agree) / static_cast<double>(raw) : 1.0;
  bool ok = frac >= 0.99 && unflagged == 0 && spot_agree == static_cast<long>(spot.size());
  r.details.push_back(std::to_string(raw) + " pairs in " + std::to_string(classes.size()) + " orbits; agreement " +
                      detail::fmt(100.0 * frac) + "%");
  r.details.push_back("disagreements flagged IllConditioned " + std::to_string(flagged) + ", unflagged " + std::to_string(unflagged));
  r.details.push_back("direct probe on " + std::to_string(spot.size()) + " raw pairs matches the orbit probe on " +
                      std::to_string(spot_agree));
  r.details.push_back("check_openness pass " + detail::fmt(check_seconds) + " s");
  return detail::finish(r, ok, t);
}

// 4. Realization norm tracks delta.
inline CriterionResult criterion_realization(const Options& opt) {
  detail::Timer t;
  CriterionResult r{4, "realization: 20 open rank-deficient pairs, delta 1e-3..1e-9, residual <= 1e-10, ratio spread < 10x", false, 0, 60.0, {}};
  const std::vector<double> deltas{1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9};
  int failures = 0, pairs_ok = 0;
  double worst_spread = 0.0, worst_residual = 0.0;
  for (int i = 0; i < 20; ++i) {
    Rng rng(derive_seed(opt.tol.rng_seed, 400000 + static_cast<std::uint64_t>(i)));
    const int k = uniform_int(1, 4, rng);
    const int m = uniform_int(k + 1, 6, rng), n = uniform_int(k + 1, 6, rng);
    FactorPair p(gaussian_matrix(m, k, rng), gaussian_matrix(k, n, rng));
    Tolerances tol = opt.tol;
    tol.rng_seed = derive_seed(opt.tol.rng_seed, 410000 + static_cast<std::uint64_t>(i));
    const auto table = measure_delta_ratio(p, deltas, 3, tol);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    bool pair_ok = check_openness(p, tol).open;
    for (const auto& row : table) {
      failures += row.failures;
      if (row.failures) pair_ok = false;
      worst_residual = std::max(worst_residual, row.max_residual);
      if (row.max_residual > 1e-10) pair_ok = false;
      lo = std::min(lo, row.max_ratio);
      hi = std::max(hi, row.max_ratio);
    }
    const double spread = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    worst_spread = std::max(worst_spread, spread);
    if (spread >= 10.0) pair_ok = false;
    pairs_ok += pair_ok;
  }
  r.details.push_back(std::to_string(pairs_ok) + "/20 pairs pass; failures " + std::to_string(failures) +
                      "; worst residual " + detail::fmt(worst_residual) + "; worst ratio spread " + detail::fmt(worst_spread));
  return detail::finish(r, pairs_ok == 20, t);
}

// 5. The upper-triangular quadratic solve.
inline CriterionResult criterion_p_solver(const Options& opt) {
  detail::Timer t;
  CriterionResult r{5, "P-solver: 500 instances, residual <= 1e-12, |P| <= 3|R|, |P|/|R| <= 2.2 when |R| <= 1e-8", false, 0, 10.0, {}};
  double worst_res = 0.0, worst_ratio = 0.0, worst_small_ratio = 0.0;
  int small = 0, bad = 0;
  for (int i = 0; i < 500; ++i) {
    Rng rng(derive_seed(opt.tol.rng_seed, 500000 + static_cast<std::uint64_t>(i)));
    const int n = uniform_int(1, 8, rng);
    Vector sigma = uniform_matrix(n, 1, 0.5, 2.0, rng).col(0);
    Matrix g = uniform_matrix(n, n, -1.0, 1.0, rng);
    g = (0.5 * (g + g.transpose())).eval();
    const double scale = solve_p_delta0(sigma) * std::pow(10.0, -12.0 * uniform_matrix(1, 1, 0.0, 1.0, rng)(0, 0));
    g *= scale / max_abs(g);
    try {
      SymSolveResult s = solve_p(sigma, g, opt.tol);
      const double ratio = s.p_inf_norm / s.r_inf_norm;
      worst_res = std::max(worst_res, s.max_equation_residual);
      worst_ratio = std::max(worst_ratio, ratio);
      if (s.max_equation_residual > 1e-12 || ratio > 3.0) ++bad;
      if (s.r_inf_norm <= 1e-8) {
        ++small;
        worst_small_ratio = std::max(worst_small_ratio, ratio);
        if (ratio > 2.2) ++bad;
      }
    } catch (const Error&) {
      ++bad;
    }
  }
  r.details.push_back("worst equation residual " + detail::fmt(worst_res) + ", worst |P|/|R| " + detail::fmt(worst_ratio) +
                      ", worst on " + std::to_string(small) + " small instances " + detail::fmt(worst_small_ratio));
  return detail::finish(r, bad == 0 && small > 0, t);
}

// 6. Symmetric realization against an independent solver.
inline CriterionResult criterion_symmetric(const Options& opt) {
  detail::Timer t;
  CriterionResult r{6, "symmetric realization: 100 instances, residual <= 1e-10, feasibility matches the oracle", false, 0, 60.0, {}};
  int agree = 0, feasible = 0, infeasible = 0, over_residual = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(derive_seed(opt.tol.rng_seed, 600000 + static_cast<std::uint64_t>(i)));
    const int n = uniform_int(1, 4, rng), k = uniform_int(1, 3, rng);
    const int rk = uniform_int(0, std::min(n, k), rng);
    Matrix w = gaussian_matrix(n, rk, rng) * gaussian_matrix(rk, k, rng);
    double smin = 1.0;
    if (rk > 0) smin = std::min(1.0, sym_eigen_desc(w * w.transpose()).values(rk - 1));
    const double delta = 1e-4 * smin;
    Matrix s;
    if (i % 2 == 0) {
      Matrix e = gaussian_matrix(n, k, rng);
      e *= delta / e.norm();
      s = (w + e) * (w + e).transpose();
    } else {
      Matrix e = gaussian_matrix(n, n, rng);
      e = (0.5 * (e + e.transpose())).eval();
      e *= delta / e.norm();
      s = w * w.transpose() + e;
    }
    bool lib = false;
    try {
      SymRealizationWitness wr = sym_realize(w, s, opt.tol);
      worst = std::max(worst, wr.residual);
      lib = wr.residual <= 1e-10;
      if (!lib) ++over_residual;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotPSD && e.kind() != ErrorKind::RankInfeasible) ++over_residual;
    }
    const bool oracle = detail::symmetric_oracle(w, s, derive_seed(opt.tol.rng_seed, 610000 + static_cast<std::uint64_t>(i)), 1e-10);
    agree += lib == oracle;
    (oracle ? feasible : infeasible)++;
  }
  r.details.push_back("agreement " + std::to_string(agree) + "/100 (" + std::to_string(feasible) + " feasible, " +
                      std::to_string(infeasible) + " infeasible); worst residual " + detail::fmt(worst) +
                      "; unexpected refusals or residuals " + std::to_string(over_residual));
  return detail::finish(r, agree == 100 && over_residual == 0 && infeasible > 0 && feasible > 0, t);
}

// 7. Two-layer sweep: no spurious local minima.
inline CriterionResult criterion_two_layer_sweep(const Options& opt) {
  detail::Timer t;
  CriterionResult r{7, "two-layer GD sweep: 200 instances, converged endpoints global within 1e-6 or verified saddles", false, 0, 120.0, {}};
  std::vector<TrialRecord> recs(200);
  parallel_for(200, opt.jobs, [&](int i) {
    Rng rng(derive_seed(opt.tol.rng_seed, 700000 + static_cast<std::uint64_t>(i)));
    SweepConfig cfg;
    cfg.spec.dims = {uniform_int(1, 4, rng), uniform_int(1, 4, rng), uniform_int(1, 4, rng)};
    cfg.spec.n_samples = uniform_int(1, 4, rng);
    cfg.trials = 1;
    cfg.seed = derive_seed(opt.tol.rng_seed, 710000 + static_cast<std::uint64_t>(i));
    recs[static_cast<std::size_t>(i)] = gd_sweep(cfg, opt.tol).records[0];
  });
  int converged = 0, near_global = 0, saddles = 0, spurious = 0, bad = 0;
  std::map<std::string, int> hist;
  for (const auto& rec : recs) {
    hist[to_string(rec.status)]++;
    if (rec.status == CriticalStatus::SpuriousLocalMin) ++spurious;
    if (!rec.converged) continue;
    ++converged;
    const bool saddle = (rec.status == CriticalStatus::SecondOrderSaddle || rec.status == CriticalStatus::SaddleHigherOrder) &&
                        rec.direction_decrease && *rec.direction_decrease > opt.tol.residual_abs;
    if (std::abs(rec.objective - rec.global_value) <= 1e-6)
      ++near_global;
    else if (saddle)
      ++saddles;
    else
      ++bad;
  }
  std::string h;
  for (const auto& [k, v] : hist) h += k + "=" + std::to_string(v) + " ";
  r.details.push_back(std::to_string(converged) + " converged: " + std::to_string(near_global) + " global, " +
                      std::to_string(saddles) + " saddles, " + std::to_string(bad) + " unexplained; " +
                      std::to_string(spurious) + " SpuriousLocalMin");
  r.details.push_back("histogram " + h);
  return detail::finish(r, bad == 0 && spurious == 0 && converged > 0, t);
}

// Dim tuples d_h..d_0 with h <= 4 and widths in 1..3 without an admissible
// (p1, p2) pair.
inline std::vector<std::vector<int>> non_constructible_tuples() {
  std::vector<std::vector<int>> out;
  for (int h = 1; h <= 4; ++h) {
    int total = 1;
    for (int i = 0; i <= h; ++i) total *= 3;
    for (int c = 0; c < total; ++c) {
      std::vector<int> d;
      for (int i = 0, x = c; i <= h; ++i, x /= 3) d.push_back(1 + x % 3);
      if (!counterexample_pair(d)) out.push_back(d);
    }
  }
  return out;
}

// Sample count for the random-data sweeps over the tuples.
inline constexpr int kDichotomySamples = 3;

// 8. Constructible widths give the counterexample, the others never do.
inline CriterionResult criterion_dichotomy(const Options& opt) {
  detail::Timer t;
  CriterionResult r{8, "dichotomy: factory points (2,1,1,2), (3,2,2,3) verified; no SpuriousLocalMin on other tuples", false, 0, 600.0, {}};
  bool ok = true;
  for (const std::vector<int>& dims : {std::vector<int>{2, 1, 1, 2}, std::vector<int>{3, 2, 2, 3}}) {
    Counterexample ce = counterexample_factory(dims, opt.tol);
    NetworkSpec spec = spec_of(ce.point);
    const double gn = tuple_norm(gradient(ce.point, spec));
    const double obj = objective(ce.point, spec);
    ProbeReport pr = local_min_probe(ce.point, spec, opt.tol);
    const bool this_ok = gn <= 1e-12 && std::abs(obj - 0.5) <= 1e-12 && pr.locally_minimal;
    ok = ok && this_ok;
    std::string radii;
    for (const auto& p : pr.radii) radii += " " + detail::fmt(p.radius) + ":" + detail::fmt(p.min_diff);
    std::string name;
    for (int d : dims) name += (name.empty() ? "" : ",") + std::to_string(d);
    r.details.push_back("(" + name + ") gradient " + detail::fmt(gn) + ", objective " + detail::fmt(obj) +
                        ", probe min differences" + radii + (this_ok ? "" : " -> fails"));
  }
  const auto tuples = non_constructible_tuples();
  std::vector<SweepReport> reps(tuples.size());
  parallel_for(static_cast<int>(tuples.size()), opt.jobs, [&](int i) {
    SweepConfig cfg;
    cfg.spec.dims = tuples[static_cast<std::size_t>(i)];
    cfg.spec.n_samples = kDichotomySamples;
    cfg.trials = 100;
    cfg.seed = derive_seed(opt.tol.rng_seed, 800000 + static_cast<std::uint64_t>(i));
    reps[static_cast<std::size_t>(i)] = gd_sweep(cfg, opt.tol);
  });
  int spurious = 0, converged = 0, trials = 0;
  std::map<std::string, int> hist;
  for (const auto& rep : reps) {
    spurious += rep.spurious;
    converged += rep.converged;
    trials += static_cast<int>(rep.records.size());
    for (const auto& [k, v] : rep.histogram) hist[k] += v;
  }
  std::string h;
  for (const auto& [k, v] : hist) h += k + "=" + std::to_string(v) + " ";
  r.details.push_back(std::to_string(tuples.size()) + " tuples, " + std::to_string(trials) + " trials, " +
                      std::to_string(converged) + " converged, " + std::to_string(spurious) + " SpuriousLocalMin");
  r.details.push_back("histogram " + h);
  return detail::finish(r, ok && spurious == 0, t);
}

// 9. Layer gradients against central differences.
inline CriterionResult criterion_gradient(const Options& opt) {
  detail::Timer t;
  CriterionResult r{9, "gradient: central differences on 100 random networks (h<=4), relative error <= 1e-6", false, 0, 10.0, {}};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(derive_seed(opt.tol.rng_seed, 900000 + static_cast<std::uint64_t>(i)));
    const int h = uniform_int(1, 4, rng);
    NetworkPoint pt;
    std::vector<int> dims;
    for (int k = 0; k <= h; ++k) dims.push_back(uniform_int(1, 4, rng));
    const int n = uniform_int(1, 4, rng);
    for (int k = 0; k < h; ++k) pt.weights.push_back(uniform_matrix(dims[k], dims[k + 1], -1.0, 1.0, rng));
    pt.X = uniform_matrix(dims[h], n, -1.0, 1.0, rng);
    pt.Y = uniform_matrix(dims[0], n, -1.0, 1.0, rng);
    const auto g = gradient(pt);
    std::vector<Matrix> fd = g;
    const double step = 1e-5;
    for (std::size_t l = 0; l < pt.weights.size(); ++l)
      for (Eigen::Index a = 0; a < pt.weights[l].size(); ++a) {
        NetworkPoint p1 = pt, p2 = pt;
        p1.weights[l](a) += step;
        p2.weights[l](a) -= step;
        fd[l](a) = (objective(p1) - objective(p2)) / (2.0 * step);
      }
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < g.size(); ++l) {
      num += (g[l] - fd[l]).squaredNorm();
      den += g[l].squaredNorm();
    }
    const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
    worst = std::max(worst, rel);
  }
  r.details.push_back("worst relative error " + detail::fmt(worst));
  return detail::finish(r, worst <= 1e-6, t);
}

// 10. Bounded row basis.
inline CriterionResult criterion_bounded_basis(const Options& opt) {
  detail::Timer t;
  CriterionResult r{10, "bounded basis: 500 rank-deficient matrices (m<=8), residual <= 1e-10, |coeffs| <= 2^(m-r-1)", false, 0, 5.0, {}};
  double worst_res = 0.0, worst_level = 0.0;
  int bad = 0;
  for (int i = 0; i < 500; ++i) {
    Rng rng(derive_seed(opt.tol.rng_seed, 1000000 + static_cast<std::uint64_t>(i)));
    const int m = uniform_int(2, 8, rng), c = uniform_int(1, 8, rng);
    const int rk = uniform_int(0, std::min(m - 1, c), rng);
    Matrix v = gaussian_matrix(m, rk, rng) * gaussian_matrix(rk, c, rng);
    if (i % 4 == 0 && rk > 0) {
      // Integer rows with exact duplicates and sums.
      v = Matrix::Zero(m, c);
      for (int a = 0; a < rk; ++a)
        for (int b = 0; b < c; ++b) v(a, b) = uniform_int(-2, 2, rng);
      for (int a = rk; a < m; ++a) v.row(a) = v.row(uniform_int(0, rk - 1, rng)) + v.row(uniform_int(0, rk - 1, rng));
      if (rank(v, opt.tol) >= m) continue;
    }
    try {
      BoundedBasisResult bb = bounded_basis(v, opt.tol);
      const Matrix rec = bb.coeffs * openmap::detail::take_rows(v, bb.basis_rows);
      const double res = bb.dependent_rows.empty() ? 0.0 : (openmap::detail::take_rows(v, bb.dependent_rows) - rec).norm();
      worst_res = std::max(worst_res, res);
      worst_level = std::max(worst_level, bb.achieved / bb.bound);
      // Coefficients that are exact powers of two come back within an ulp.
      if (res > 1e-10 || bb.achieved > bb.bound * (1.0 + 1e-12)) ++bad;
    } catch (const Error&) {
      ++bad;
    }
  }
  r.details.push_back("worst residual " + detail::fmt(worst_res) + ", worst |coeffs| / bound " + detail::fmt(worst_level) +
                      ", failures " + std::to_string(bad));
  return detail::finish(r, bad == 0, t);
}

inline const std::vector<std::function<CriterionResult(const Options&)>>& criteria() {
  static const std::vector<std::function<CriterionResult(const Options&)>> all{
      criterion_intro,      criterion_appendix_fixture, criterion_openness_grid,  criterion_realization,
      criterion_p_solver,   criterion_symmetric,        criterion_two_layer_sweep, criterion_dichotomy,
      criterion_gradient,   criterion_bounded_basis};
  return all;
}

inline void print(const CriterionResult& r, std::ostream& os) {
  os << (r.passed ? "[PASS] " : "[FAIL] ") << r.id << ". " << r.title << " (" << detail::fmt(r.seconds) << " s, budget "
     << detail::fmt(r.budget_seconds) << " s)\n";
  for (const auto& d : r.details) os << "         " << d << "\n";
  os.flush();
}

// Runs the selected criteria (all when empty); true when every one passes.
inline bool run(const std::vector<int>& ids, const Options& opt, std::ostream& os, std::vector<CriterionResult>* out = nullptr) {
  bool all = true;
  for (std::size_t i = 0; i < criteria().size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!ids.empty() && std::find(ids.begin(), ids.end(), id) == ids.end()) continue;
    CriterionResult r = criteria()[i](opt);
    print(r, os);
    all = all && r.passed;
    if (out) out->push_back(r);
  }
  return all;
}

}  // namespace openmap::acceptance
