#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "openmap/landscape.hpp"
#include "openmap/random.hpp"

namespace openmap {

inline int default_jobs() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

// Runs body(i) for i in [0, count) on `jobs` threads; results must be stored
// by index so the outcome does not depend on scheduling.
template <class F>
void parallel_for(int count, int jobs, F&& body) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct GdResult {
  NetworkPoint point;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double gradient_norm = 0.0;
};

namespace detail {

// Fixed-capacity matrices keep the inner loop free of heap traffic.
template <int Cap>
using CappedMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, Cap, Cap>;

template <class M>
struct Forward {
  std::vector<M> below;  // below[k] = W_k ... W_1 X
  double value = 0.0;
};

template <class M>
void forward(const std::vector<M>& w, const M& x, const M& y, Forward<M>& f) {
  const std::size_t h = w.size();
  f.below.resize(h + 1);
  f.below[0] = x;
  for (std::size_t k = 0; k < h; ++k) f.below[k + 1].noalias() = w[k] * f.below[k];
  f.value = 0.5 * (f.below[h] - y).squaredNorm();
}

template <class M>
double backward(const std::vector<M>& w, const M& y, const Forward<M>& f, std::vector<M>& g, M& up, M& tmp) {
  const std::size_t h = w.size();
  up = f.below[h] - y;
  g.resize(h);
  double sq = 0.0;
  for (std::size_t k = h; k-- > 0;) {
    g[k].noalias() = up * f.below[k].transpose();
    sq += g[k].squaredNorm();
    if (k > 0) {
      tmp.noalias() = w[k].transpose() * up;
      std::swap(up, tmp);
    }
  }
  return std::sqrt(sq);
}

// Size of f below which the sufficient-decrease test is lost in roundoff.
inline double flat_level(double f) { return 8.0 * std::numeric_limits<double>::epsilon() * std::abs(f); }

template <class M>
GdResult run_gd(const NetworkPoint& start, const Tolerances& tol, int max_iter) {
  const int h = start.depth();
  std::vector<M> w, trial, g, gt;
  for (int k = 1; k <= h; ++k) w.push_back(start.layer(k));
  trial = w;
  const M x = start.X, y = start.Y;
  M up, tmp;
  Forward<M> cur, next;
  forward(w, x, y, cur);
  double gn = backward(w, y, cur, g, up, tmp);
  double step = 1.0;
  int it = 0;
  for (; it < max_iter && gn > tol.grad_abs; ++it) {
    bool accepted = false;
    for (int bt = 0; bt < 80; ++bt) {
      for (std::size_t k = 0; k < g.size(); ++k) trial[k] = w[k] - step * g[k];
      forward(trial, x, y, next);
      const double want = 1e-4 * step * gn * gn;
      if (want >= flat_level(cur.value)) {
        if (next.value <= cur.value - want) {
          std::swap(w, trial);
          std::swap(cur, next);
          gn = backward(w, y, cur, g, up, tmp);
          accepted = true;
        }
      } else if (next.value <= cur.value + flat_level(cur.value)) {
        // f is flat to working precision here; the gradient norm decides.
        const double gtn = backward(trial, y, next, gt, up, tmp);
        if (gtn < gn) {
          std::swap(w, trial);
          std::swap(cur, next);
          std::swap(g, gt);
          gn = gtn;
          accepted = true;
        }
      }
      if (accepted) {
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  GdResult r;
  r.converged = gn <= tol.grad_abs;
  r.iterations = it;
  r.objective = cur.value;
  r.gradient_norm = gn;
  r.point = start;
  for (int k = 1; k <= h; ++k) r.point.layer(k) = w[static_cast<std::size_t>(k) - 1];
  return r;
}

}  // namespace detail

// Gradient descent on the squared loss with Armijo backtracking; the step
// doubles after each accepted move.
inline GdResult gradient_descent(const NetworkPoint& pt, const Tolerances& tol, int max_iter) {
  int widest = static_cast<int>(std::max(pt.X.rows(), pt.X.cols()));
  for (const auto& w : pt.weights) widest = std::max<int>(widest, static_cast<int>(std::max(w.rows(), w.cols())));
  widest = std::max<int>(widest, static_cast<int>(std::max(pt.Y.rows(), pt.Y.cols())));
  if (widest <= 4) return detail::run_gd<detail::CappedMatrix<4>>(pt, tol, max_iter);
  if (widest <= 8) return detail::run_gd<detail::CappedMatrix<8>>(pt, tol, max_iter);
  return detail::run_gd<Matrix>(pt, tol, max_iter);
}

// Same iteration for any loss, through the generic objective and gradient.
inline GdResult gradient_descent(NetworkPoint pt, const NetworkSpec& spec, const Tolerances& tol, int max_iter) {
  if (spec.loss == LossKind::SquaredError) return gradient_descent(pt, tol, max_iter);
  GdResult r;
  double step = 1.0;
  double f = objective(pt, spec);
  std::vector<Matrix> g = gradient(pt, spec);
  double gn = tuple_norm(g);
  NetworkPoint trial = pt;
  int it = 0;
  for (; it < max_iter && gn > tol.grad_abs; ++it) {
    bool accepted = false;
    for (int bt = 0; bt < 80; ++bt) {
      for (std::size_t k = 0; k < g.size(); ++k) trial.weights[k] = pt.weights[k] - step * g[k];
      const double ft = objective(trial, spec);
      if (ft <= f - 1e-4 * step * gn * gn) {
        std::swap(pt.weights, trial.weights);
        f = ft;
        accepted = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    g = gradient(pt, spec);
    gn = tuple_norm(g);
  }
  r.converged = gn <= tol.grad_abs;
  r.iterations = it;
  r.objective = f;
  r.gradient_norm = gn;
  r.point = std::move(pt);
  return r;
}

// Gaussian X and a Y whose rank is drawn uniformly from 1..min(d_h, n).
inline std::pair<Matrix, Matrix> random_data(const NetworkSpec& spec, Rng& rng) {
  const int h = spec.depth(), n = spec.n_samples;
  Matrix x = gaussian_matrix(spec.width(0), n, rng);
  const int r = uniform_int(1, std::min(spec.width(h), n), rng);
  Matrix y = gaussian_matrix(spec.width(h), r, rng) * gaussian_matrix(r, n, rng);
  return {x, y};
}

struct SweepConfig {
  NetworkSpec spec;
  std::optional<Matrix> X, Y;  // random per trial when unset
  int trials = 0;
  std::uint64_t seed = 12345;
  int jobs = 1;
  int max_iter = 100000;
};

struct TrialRecord {
  int index = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double gradient_norm = 0.0;
  double global_value = 0.0;
  CriticalStatus status = CriticalStatus::NotCritical;
  bool degenerate = false;
  std::optional<int> direction_order;
  std::optional<double> direction_decrease;
  std::string construction;
};

struct SweepReport {
  std::vector<TrialRecord> records;
  std::map<std::string, int> histogram;
  int converged = 0;
  int spurious = 0;
  double max_gap_converged = 0.0;  // max objective - global_value over converged trials
};

inline TrialRecord gd_trial(const SweepConfig& cfg, int index, const Tolerances& tol) {
  TrialRecord rec;
  rec.index = index;
  rec.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
  Rng rng(rec.seed);
  NetworkPoint pt;
  if (cfg.X && cfg.Y) {
    pt.X = *cfg.X;
    pt.Y = *cfg.Y;
  } else {
    auto [x, y] = random_data(cfg.spec, rng);
    pt.X = x;
    pt.Y = y;
  }
  const int h = cfg.spec.depth();
  pt.weights.resize(static_cast<std::size_t>(h));
  for (int k = h; k >= 1; --k) pt.layer(k) = uniform_matrix(cfg.spec.width(k), cfg.spec.width(k - 1), -1.0, 1.0, rng);
  GdResult gd = gradient_descent(pt, cfg.spec, tol, cfg.max_iter);
  rec.converged = gd.converged;
  rec.iterations = gd.iterations;
  rec.objective = gd.objective;
  rec.gradient_norm = gd.gradient_norm;
  ClassificationReport c = classify(gd.point, cfg.spec, tol);
  rec.global_value = c.global_value;
  rec.status = c.status;
  rec.degenerate = c.degenerate;
  if (c.descent_direction) {
    rec.direction_order = c.descent_direction->order;
    rec.direction_decrease = c.descent_direction->decrease;
    rec.construction = to_string(c.descent_direction->construction_case);
  }
  return rec;
}

inline SweepReport gd_sweep(const SweepConfig& cfg, const Tolerances& tol = {}) {
  cfg.spec.validate();
  tol.validate();
  if (cfg.trials < 0) throw Error(ErrorKind::InvalidInput, "trials must be >= 0");
  if (cfg.X.has_value() != cfg.Y.has_value()) throw Error(ErrorKind::InvalidInput, "give both X and Y or neither");
  if (cfg.X) {
    NetworkPoint probe;
    probe.X = *cfg.X;
    probe.Y = *cfg.Y;
    for (int k = cfg.spec.depth(); k >= 1; --k)
      probe.weights.push_back(Matrix::Zero(cfg.spec.width(k), cfg.spec.width(k - 1)));
    validate_point(probe, cfg.spec);
  }
  SweepReport rep;
  rep.records.resize(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, cfg.jobs, [&](int i) { rep.records[static_cast<std::size_t>(i)] = gd_trial(cfg, i, tol); });
  for (const auto& r : rep.records) {
    rep.histogram[to_string(r.status)]++;
    if (r.status == CriticalStatus::SpuriousLocalMin) ++rep.spurious;
    if (r.converged) {
      ++rep.converged;
      if (cfg.spec.loss == LossKind::SquaredError)
        rep.max_gap_converged = std::max(rep.max_gap_converged, r.objective - r.global_value);
    }
  }
  return rep;
}

}  // namespace openmap
