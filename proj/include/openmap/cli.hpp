#pragma once

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "openmap/acceptance.hpp"
#include "openmap/harness.hpp"
#include "openmap/json_io.hpp"
#include "openmap/landscape.hpp"
#include "openmap/openness.hpp"
#include "openmap/realization.hpp"
#include "openmap/symmetric.hpp"

namespace openmap::cli {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kInputError = 2, kDomainRefusal = 3, kNumericalFailure = 4 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput:
    case ErrorKind::UnsupportedActivation:
      return kInputError;
    case ErrorKind::NumericalFailure:
    case ErrorKind::DirectionConstructionFailed:
      return kNumericalFailure;
    default:
      return kDomainRefusal;
  }
}

struct RunConfig {
  std::string command;
  std::vector<std::pair<std::string, std::string>> inputs;
  Tolerances tol;
  int trials = 0;
  int jobs = 1;
  std::string out;
  std::string format = "json";
};

// JSON encoders for library results.

inline json to_json(const OpennessReport& r) {
  json j;
  j["regime"] = to_string(r.regime);
  j["open"] = r.open;
  j["rank_w1"] = r.rank_w1;
  j["rank_w2"] = r.rank_w2;
  j["rank_product"] = r.rank_product;
  j["intersection_dim"] = r.intersection_dim_value;
  j["transposed_intersection_dim"] = r.transposed_intersection_dim_value;
  j["condition_flags"] = json::object();
  for (const auto& [k, v] : r.condition_flags) j["condition_flags"][k] = v;
  j["witness_w1_tilde"] = r.witness_w1_tilde ? matrix_to_json(*r.witness_w1_tilde) : json(nullptr);
  j["witness_w2_tilde"] = r.witness_w2_tilde ? matrix_to_json(*r.witness_w2_tilde) : json(nullptr);
  return j;
}

inline json to_json(const Witnesses& w) {
  json j;
  j["w1_tilde"] = w.w1_tilde ? matrix_to_json(*w.w1_tilde) : json(nullptr);
  j["w2_tilde"] = w.w2_tilde ? matrix_to_json(*w.w2_tilde) : json(nullptr);
  return j;
}

inline json to_json(const OpennessProbeReport& r) {
  json j;
  j["delta"] = r.delta;
  j["trials"] = r.trials;
  j["successes"] = r.successes;
  j["success_fraction"] = r.success_fraction;
  j["max_factor_norm"] = r.max_factor_norm;
  j["records"] = json::array();
  for (const auto& t : r.records)
    j["records"].push_back({{"success", t.success},
                            {"residual", real_or_null(t.residual)},
                            {"factor_norm", real_or_null(t.factor_norm)},
                            {"target_distance", real_or_null(t.target_distance)}});
  return j;
}

inline json to_json(const RealizationWitness& w) {
  json j;
  j["delta_w1"] = matrix_to_json(w.delta_w1);
  j["delta_w2"] = matrix_to_json(w.delta_w2);
  j["target_residual"] = w.target_residual;
  j["delta_norm"] = w.delta_norm;
  j["input_delta"] = w.input_delta;
  j["regime"] = to_string(w.regime);
  j["route"] = w.route;
  j["epsilon"] = w.epsilon;
  j["delta0"] = w.delta0 ? json(*w.delta0) : json(nullptr);
  return j;
}

inline json to_json(const DeltaRatioRow& r) {
  return {{"delta", r.delta},         {"successes", r.successes},  {"failures", r.failures},
          {"max_ratio", r.max_ratio}, {"max_residual", r.max_residual}, {"errors", r.errors}};
}

inline json to_json(const SymSolveResult& r) {
  return {{"P", matrix_to_json(r.P)},
          {"residual", r.residual},
          {"max_equation_residual", r.max_equation_residual},
          {"p_inf_norm", r.p_inf_norm},
          {"r_inf_norm", r.r_inf_norm}};
}

inline json to_json(const SymRealizationWitness& w) {
  json j;
  j["A_eps"] = matrix_to_json(w.A_eps);
  j["residual"] = w.residual;
  j["a_norm"] = w.a_norm;
  j["input_delta"] = w.input_delta;
  j["rank"] = w.rank;
  j["sigma_min"] = w.sigma_min ? json(*w.sigma_min) : json(nullptr);
  j["bound"] = w.bound ? json(*w.bound) : json(nullptr);
  return j;
}

inline json to_json(const BmCertificate& c) {
  json j;
  j["open"] = c.open;
  j["rank"] = c.rank;
  j["sigma_min"] = c.sigma_min ? json(*c.sigma_min) : json(nullptr);
  j["bound_coefficient"] = c.bound_coefficient ? json(*c.bound_coefficient) : json(nullptr);
  j["delta0"] = c.delta0 ? json(*c.delta0) : json(nullptr);
  j["degenerate_bound"] = c.degenerate_bound;
  j["statement"] = c.statement;
  return j;
}

inline json to_json(const ProbeReport& p) {
  json j;
  j["base_value"] = p.base_value;
  j["locally_minimal"] = p.locally_minimal;
  j["radii"] = json::array();
  for (const auto& r : p.radii) j["radii"].push_back({{"radius", r.radius}, {"min_diff", r.min_diff}, {"samples", r.samples}});
  return j;
}

inline json to_json(const DirectionTuple& d) {
  return {{"directions", matrices_to_json(d.directions)},
          {"order", d.order},
          {"step", d.step},
          {"decrease", d.decrease},
          {"construction_case", to_string(d.construction_case)}};
}

inline json to_json(const ClassificationReport& r) {
  json j;
  j["status"] = to_string(r.status);
  j["degenerate"] = r.degenerate;
  j["gradient_norm"] = r.gradient_norm;
  j["objective"] = r.objective;
  j["global_value"] = real_or_null(r.global_value);
  j["product_rank"] = r.product_rank;
  j["reduced_depth"] = r.reduced_depth;
  j["descent_direction"] = r.descent_direction ? to_json(*r.descent_direction) : json(nullptr);
  j["probe"] = r.probe ? to_json(*r.probe) : json(nullptr);
  j["certificates"] = json::array();
  for (const auto& c : r.certificates)
    j["certificates"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return j;
}

inline json to_json(const PyramidalCertificate& c) {
  return {{"pyramidal_structure", c.pyramidal_structure}, {"full_row_rank", c.full_row_rank},
          {"x_full_column_rank", c.x_full_column_rank},   {"locally_open", c.locally_open},
          {"certified", c.certified},                     {"statement", c.statement}};
}

inline json to_json(const TrialRecord& r) {
  json j;
  j["index"] = r.index;
  j["seed"] = r.seed;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["objective"] = r.objective;
  j["gradient_norm"] = r.gradient_norm;
  j["global_value"] = real_or_null(r.global_value);
  j["status"] = to_string(r.status);
  j["degenerate"] = r.degenerate;
  j["direction_order"] = r.direction_order ? json(*r.direction_order) : json(nullptr);
  j["direction_decrease"] = r.direction_decrease ? json(*r.direction_decrease) : json(nullptr);
  j["construction"] = r.construction.empty() ? json(nullptr) : json(r.construction);
  return j;
}

// Accepts a column, a row or a diagonal matrix.
inline Vector vector_from_matrix(const Matrix& m) {
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  if (m.rows() == m.cols() && max_abs(Matrix(m) - Matrix(m.diagonal().asDiagonal())) == 0.0) return m.diagonal();
  throw Error(ErrorKind::InvalidInput, "Sigma must be a vector or a diagonal matrix");
}

inline std::vector<int> parse_dims(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(tok, &pos);
      if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidInput, "dims must be a comma-separated list of positive integers");
    }
  }
  if (out.size() < 2) throw Error(ErrorKind::InvalidInput, "dims needs at least two entries");
  return out;
}

inline std::vector<double> parse_reals(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(tok, &pos);
      if (pos != tok.size() || !(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidInput, "expected a comma-separated list of positive reals");
    }
  }
  return out;
}

inline NetworkPoint read_point(const std::string& weights, const std::string& x, const std::string& y) {
  NetworkPoint pt;
  pt.weights = matrices_from_json(read_json_file(weights));
  pt.X = read_matrix_file(x);
  pt.Y = read_matrix_file(y);
  validate_point(pt, spec_of(pt));
  return pt;
}

inline json counterexample_json(const Counterexample& ce, const Tolerances& tol) {
  NetworkSpec spec = spec_of(ce.point);
  json j;
  j["dims"] = spec.dims;
  j["p1"] = ce.p1 ? json(ce.p1) : json(nullptr);
  j["p2"] = ce.p2 ? json(ce.p2) : json(nullptr);
  j["X"] = matrix_to_json(ce.X);
  j["Y"] = matrix_to_json(ce.Y);
  j["weights"] = matrices_to_json(ce.point.weights);
  j["objective"] = objective(ce.point, spec);
  j["gradient_norm"] = tuple_norm(gradient(ce.point, spec));
  ClassificationReport cr = classify(ce.point, spec, tol);
  j["status"] = to_string(cr.status);
  j["classification"] = to_json(cr);
  return j;
}

// Scalars one per line; matrices are summarized by shape.
inline void text_summary(const json& j, const std::string& prefix, std::ostream& os) {
  if (j.is_object() && j.contains("rows") && j.contains("cols") && j.contains("data") && j.size() == 3) {
    os << prefix << ": [" << j["rows"] << " x " << j["cols"] << " matrix]\n";
    return;
  }
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) text_summary(v, prefix.empty() ? k : prefix + "." + k, os);
    return;
  }
  if (j.is_array()) {
    if (j.size() > 8) {
      os << prefix << ": [" << j.size() << " entries]\n";
      return;
    }
    for (std::size_t i = 0; i < j.size(); ++i) text_summary(j[i], prefix + "[" + std::to_string(i) + "]", os);
    return;
  }
  os << prefix << ": " << j.dump() << "\n";
}

inline json error_json(const std::string& kind, const std::string& message, int code) {
  return {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
}

// Full command-line entry point. Reports go to `out` (or --out), errors to `err`.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"openmap: openness of matrix-product maps and linear network landscapes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  RunConfig cfg;
  std::optional<double> tol_rank, tol_grad, tol_residual;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials, jobs;
  app.add_option("--tol-rank", tol_rank, "relative singular-value cutoff for numeric rank");
  app.add_option("--tol-grad", tol_grad, "gradient-norm threshold for critical points");
  app.add_option("--tol-residual", tol_residual, "absolute residual tolerance");
  app.add_option("--seed", seed, "master RNG seed");
  app.add_option("--trials", trials, "trial count for probes and sweeps");
  app.add_option("--jobs", jobs, "worker threads");
  app.add_option("--out", cfg.out, "write the report to this file instead of stdout");
  app.add_option("--format", cfg.format, "json or text")->check(CLI::IsMember({"json", "text"}));

  std::string w1, w2, target, w, sigma, rmat, weights, xs, ys, dims_s, name = "appendix-d", acts_s, deltas_s;
  double delta = 1e-5;
  int samples = 2, max_iter = 100000;
  bool with_witnesses = false;
  std::vector<int> criteria_ids;

  auto* openness = app.add_subcommand("openness", "local openness of (W1, W2) -> W1 W2");
  openness->require_subcommand(1);
  auto* o_check = openness->add_subcommand("check", "openness report");
  o_check->add_option("--w1", w1)->required();
  o_check->add_option("--w2", w2)->required();
  o_check->add_flag("--witnesses", with_witnesses, "include witness matrices");
  auto* o_probe = openness->add_subcommand("probe", "numerical factor-recovery probe");
  o_probe->add_option("--w1", w1)->required();
  o_probe->add_option("--w2", w2)->required();
  o_probe->add_option("--delta", delta, "target perturbation size")->check(CLI::PositiveNumber);
  auto* o_wit = openness->add_subcommand("witnesses", "witness matrices for an open point");
  o_wit->add_option("--w1", w1)->required();
  o_wit->add_option("--w2", w2)->required();

  auto* real = app.add_subcommand("realize", "factor perturbation reaching a target product");
  real->add_option("--w1", w1);
  real->add_option("--w2", w2);
  real->add_option("--target", target);
  auto* r_sweep = real->add_subcommand("ratio-sweep", "realization norm over target distance");
  r_sweep->add_option("--w1", w1)->required();
  r_sweep->add_option("--w2", w2)->required();
  r_sweep->add_option("--deltas", deltas_s, "comma-separated target distances");

  auto* sym = app.add_subcommand("sym", "symmetric map W -> W W^T");
  sym->require_subcommand(1);
  auto* s_solve = sym->add_subcommand("solve", "upper-triangular P with P + P^T + P S^-1 P^T = R");
  s_solve->add_option("--sigma", sigma)->required();
  s_solve->add_option("--r", rmat)->required();
  auto* s_real = sym->add_subcommand("realize", "A with (W + A)(W + A)^T = target");
  s_real->add_option("--w", w)->required();
  s_real->add_option("--target", target)->required();
  auto* s_cert = sym->add_subcommand("certify", "openness certificate and bound constants");
  s_cert->add_option("--w", w)->required();

  auto* net = app.add_subcommand("net", "linear network landscapes");
  net->require_subcommand(1);
  auto* n_class = net->add_subcommand("classify", "classify a point");
  n_class->add_option("--weights", weights)->required();
  n_class->add_option("--x", xs)->required();
  n_class->add_option("--y", ys)->required();
  auto* n_ce = net->add_subcommand("counterexample", "spurious local minimum candidate for given widths");
  n_ce->add_option("--dims", dims_s, "d_h,...,d_0")->required();
  auto* n_fix = net->add_subcommand("fixture", "named fixture");
  n_fix->add_option("--name", name)->check(CLI::IsMember({"appendix-d", "intro"}));
  auto* n_probe = net->add_subcommand("probe", "random local-minimum probe");
  n_probe->add_option("--weights", weights)->required();
  n_probe->add_option("--x", xs)->required();
  n_probe->add_option("--y", ys)->required();
  n_probe->add_option("--activations", acts_s, "comma-separated activations, W_h first (pyramidal check)");
  auto* n_gd = net->add_subcommand("gd-sweep", "gradient descent from random starts, endpoints classified");
  n_gd->add_option("--dims", dims_s, "d_h,...,d_0")->required();
  n_gd->add_option("--samples", samples, "sample count n")->check(CLI::PositiveNumber);
  n_gd->add_option("--x", xs);
  n_gd->add_option("--y", ys);
  n_gd->add_option("--max-iter", max_iter)->check(CLI::PositiveNumber);

  auto* self = app.add_subcommand("selftest", "acceptance suite");
  self->add_option("criteria", criteria_ids, "criterion numbers (default all)")->check(CLI::Range(1, 10));

  auto fail = [&](const std::string& kind, const std::string& msg, int code) {
    err << error_json(kind, msg, code).dump() << "\n";
    return code;
  };

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail("InvalidInput", e.what(), kInputError);
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    // Flags over environment over defaults.
    if (const char* env = std::getenv("OPENMAP_SEED"); env && !seed) {
      try {
        std::size_t pos = 0;
        seed = std::stoull(env, &pos);
        if (pos != std::string(env).size()) throw std::invalid_argument(env);
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidInput, "OPENMAP_SEED must be a non-negative integer");
      }
    }
    if (const char* env = std::getenv("OPENMAP_JOBS"); env && !jobs) {
      try {
        std::size_t pos = 0;
        jobs = std::stoi(env, &pos);
        if (pos != std::string(env).size()) throw std::invalid_argument(env);
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidInput, "OPENMAP_JOBS must be a positive integer");
      }
    }
    if (tol_rank) {
      if (!(*tol_rank > 0.0)) throw Error(ErrorKind::InvalidInput, "--tol-rank must be positive");
      cfg.tol.rank_rel = *tol_rank;
    }
    if (tol_grad) cfg.tol.grad_abs = *tol_grad;
    if (tol_residual) cfg.tol.residual_abs = *tol_residual;
    if (seed) cfg.tol.rng_seed = *seed;
    if (trials && *trials <= 0) throw Error(ErrorKind::InvalidInput, "--trials must be positive");
    if (jobs && *jobs <= 0) throw Error(ErrorKind::InvalidInput, "--jobs must be positive");
    cfg.jobs = jobs ? *jobs : default_jobs();
    cfg.tol.validate();

    json payload;
    auto input = [&](const char* key, const std::string& path) { cfg.inputs.emplace_back(key, path); };

    if (o_check->parsed()) {
      cfg.command = "openness check";
      input("w1", w1);
      input("w2", w2);
      FactorPair p(read_matrix_file(w1), read_matrix_file(w2));
      OpennessReport rep = check_openness(p, cfg.tol);
      if (with_witnesses && rep.open) {
        Witnesses wt = construct_witnesses(p, cfg.tol);
        rep.witness_w1_tilde = wt.w1_tilde;
        rep.witness_w2_tilde = wt.w2_tilde;
      }
      payload = to_json(rep);
    } else if (o_probe->parsed()) {
      cfg.command = "openness probe";
      input("w1", w1);
      input("w2", w2);
      cfg.trials = trials.value_or(50);
      FactorPair p(read_matrix_file(w1), read_matrix_file(w2));
      payload = to_json(probe_openness(p, delta, cfg.trials, cfg.tol));
    } else if (o_wit->parsed()) {
      cfg.command = "openness witnesses";
      input("w1", w1);
      input("w2", w2);
      payload = to_json(construct_witnesses(FactorPair(read_matrix_file(w1), read_matrix_file(w2)), cfg.tol));
    } else if (r_sweep->parsed()) {
      cfg.command = "realize ratio-sweep";
      input("w1", w1);
      input("w2", w2);
      cfg.trials = trials.value_or(10);
      const std::vector<double> deltas =
          deltas_s.empty() ? std::vector<double>{1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9} : parse_reals(deltas_s);
      FactorPair p(read_matrix_file(w1), read_matrix_file(w2));
      payload["rows"] = json::array();
      for (const auto& row : measure_delta_ratio(p, deltas, cfg.trials, cfg.tol)) payload["rows"].push_back(to_json(row));
    } else if (real->parsed()) {
      cfg.command = "realize";
      if (w1.empty() || w2.empty() || target.empty())
        throw Error(ErrorKind::InvalidInput, "realize needs --w1, --w2 and --target");
      input("w1", w1);
      input("w2", w2);
      input("target", target);
      FactorPair p(read_matrix_file(w1), read_matrix_file(w2));
      payload = to_json(realize(p, read_matrix_file(target), cfg.tol));
    } else if (s_solve->parsed()) {
      cfg.command = "sym solve";
      input("sigma", sigma);
      input("r", rmat);
      payload = to_json(solve_p(vector_from_matrix(read_matrix_file(sigma)), read_matrix_file(rmat), cfg.tol));
    } else if (s_real->parsed()) {
      cfg.command = "sym realize";
      input("w", w);
      input("target", target);
      payload = to_json(sym_realize(read_matrix_file(w), read_matrix_file(target), cfg.tol));
    } else if (s_cert->parsed()) {
      cfg.command = "sym certify";
      input("w", w);
      payload = to_json(certify_bm_transfer(read_matrix_file(w), cfg.tol));
    } else if (n_class->parsed()) {
      cfg.command = "net classify";
      input("weights", weights);
      input("x", xs);
      input("y", ys);
      payload = to_json(classify(read_point(weights, xs, ys), cfg.tol));
    } else if (n_ce->parsed()) {
      cfg.command = "net counterexample";
      input("dims", dims_s);
      payload = counterexample_json(counterexample_factory(parse_dims(dims_s), cfg.tol), cfg.tol);
    } else if (n_fix->parsed()) {
      cfg.command = "net fixture";
      input("name", name);
      payload = counterexample_json(name == "intro" ? intro_fixture() : rank_deficient_y_fixture(), cfg.tol);
    } else if (n_probe->parsed()) {
      cfg.command = "net probe";
      input("weights", weights);
      input("x", xs);
      input("y", ys);
      NetworkPoint pt = read_point(weights, xs, ys);
      if (acts_s.empty()) {
        payload = to_json(local_min_probe(pt, spec_of(pt), cfg.tol));
      } else {
        input("activations", acts_s);
        std::vector<ActivationSpec> acts;
        std::stringstream ss(acts_s);
        std::string tok;
        while (std::getline(ss, tok, ',')) acts.push_back(parse_activation(tok));
        payload["certificate"] = to_json(pyramidal_check(pt, acts, cfg.tol));
        payload["probe"] = to_json(pyramidal_probe(pt, acts, cfg.tol));
      }
    } else if (n_gd->parsed()) {
      cfg.command = "net gd-sweep";
      input("dims", dims_s);
      SweepConfig sc;
      sc.spec.dims = parse_dims(dims_s);
      sc.spec.n_samples = samples;
      if (!xs.empty() || !ys.empty()) {
        if (xs.empty() || ys.empty()) throw Error(ErrorKind::InvalidInput, "give both --x and --y or neither");
        input("x", xs);
        input("y", ys);
        sc.X = read_matrix_file(xs);
        sc.Y = read_matrix_file(ys);
        sc.spec.n_samples = static_cast<int>(sc.X->cols());
      }
      cfg.trials = trials.value_or(100);
      sc.trials = cfg.trials;
      sc.seed = cfg.tol.rng_seed;
      sc.jobs = cfg.jobs;
      sc.max_iter = max_iter;
      SweepReport rep = gd_sweep(sc, cfg.tol);
      payload["records"] = json::array();
      for (const auto& r : rep.records) payload["records"].push_back(to_json(r));
      payload["histogram"] = json::object();
      for (const auto& [k, v] : rep.histogram) payload["histogram"][k] = v;
      payload["converged"] = rep.converged;
      payload["spurious"] = rep.spurious;
      payload["max_gap_converged"] = rep.max_gap_converged;
    } else if (self->parsed()) {
      cfg.command = "selftest";
      acceptance::Options opt{cfg.tol, cfg.jobs};
      std::vector<acceptance::CriterionResult> results;
      std::ostringstream lines;
      const bool ok = acceptance::run(criteria_ids, opt, lines, &results);
      err << lines.str();
      payload["passed"] = ok;
      payload["criteria"] = json::array();
      for (const auto& r : results)
        payload["criteria"].push_back({{"id", r.id}, {"title", r.title}, {"passed", r.passed}, {"details", r.details}});
    }

    json report;
    report["version"] = kVersion;
    report["config"] = {{"command", cfg.command},
                        {"inputs", json::object()},
                        {"tolerances", tolerances_to_json(cfg.tol)},
                        {"seed", cfg.tol.rng_seed},
                        {"trials", cfg.trials},
                        {"jobs", cfg.jobs},
                        {"format", cfg.format}};
    for (const auto& [k, v] : cfg.inputs) report["config"]["inputs"][k] = v;
    report["result"] = std::move(payload);

    std::ostringstream rendered;
    if (cfg.format == "text")
      text_summary(report, "", rendered);
    else
      rendered << report.dump(2) << "\n";
    if (cfg.out.empty()) {
      out << rendered.str();
    } else {
      std::ofstream f(cfg.out);
      if (!f) throw Error(ErrorKind::InvalidInput, "cannot write " + cfg.out);
      f << rendered.str();
    }
    // Timing stays out of the report so reruns are byte-identical.
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    err << json{{"wall_clock_seconds", secs}}.dump() << "\n";
    return kOk;
  } catch (const Error& e) {
    json ej = error_json(to_string(e.kind()), e.what(), exit_code_for(e.kind()));
    if (e.delta0()) ej["error"]["delta0"] = *e.delta0();
    if (e.index()) ej["error"]["index"] = *e.index();
    err << ej.dump() << "\n";
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    return fail("InvalidInput", e.what(), kInputError);
  } catch (const std::exception& e) {
    return fail("NumericalFailure", e.what(), kNumericalFailure);
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args), out, err);
}

}  // namespace openmap::cli
