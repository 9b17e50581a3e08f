#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "openmap/numeric.hpp"

namespace openmap {

using json = nlohmann::ordered_json;

inline json matrix_to_json(const Matrix& m) {
  require_finite(m, "matrix");
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  out["data"] = std::move(data);
  return out;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw Error(ErrorKind::InvalidInput, "matrix JSON needs rows, cols and data");
  if (!j["rows"].is_number_integer() || !j["cols"].is_number_integer())
    throw Error(ErrorKind::InvalidInput, "rows and cols must be integers");
  long long rows = j["rows"].get<long long>();
  long long cols = j["cols"].get<long long>();
  if (rows < 0 || cols < 0) throw Error(ErrorKind::InvalidInput, "negative matrix dimensions");
  const json& data = j["data"];
  if (!data.is_array() || static_cast<long long>(data.size()) != rows * cols)
    throw Error(ErrorKind::InvalidInput, "data length must equal rows * cols");
  Matrix m(rows, cols);
  for (long long i = 0; i < rows; ++i)
    for (long long c = 0; c < cols; ++c) {
      const json& v = data[static_cast<std::size_t>(i * cols + c)];
      if (!v.is_number()) throw Error(ErrorKind::InvalidInput, "matrix entries must be numbers");
      m(i, c) = v.get<double>();
    }
  require_finite(m, "matrix");
  return m;
}

inline json matrices_to_json(const std::vector<Matrix>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(matrix_to_json(m));
  return out;
}

inline std::vector<Matrix> matrices_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::InvalidInput, "expected a JSON array of matrices");
  std::vector<Matrix> out;
  for (const auto& e : j) out.push_back(matrix_from_json(e));
  return out;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidInput, path + ": " + e.what());
  }
}

inline Matrix read_matrix_file(const std::string& path) { return matrix_from_json(read_json_file(path)); }

inline json tolerances_to_json(const Tolerances& t) {
  json out;
  if (t.rank_rel)
    out["rank_rel"] = *t.rank_rel;
  else
    out["rank_rel"] = "eps*max(rows,cols)";
  out["grad_abs"] = t.grad_abs;
  out["residual_abs"] = t.residual_abs;
  out["probe_radius_schedule"] = t.probe_radius_schedule;
  out["probe_samples"] = t.probe_samples;
  out["rng_seed"] = t.rng_seed;
  return out;
}

// Non-finite reals are emitted as null rather than producing invalid JSON.
inline json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace openmap
