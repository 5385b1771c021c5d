#pragma once

// Scenario files (JSON) and run outputs (summary JSON + CSV series). Data
// outputs are written deterministically -- fixed key order, shortest
// round-trip doubles, no timestamps -- so identical runs produce
// byte-identical files; the wall-clock stamp lives in a separate
// <prefix>_run_meta.json.

#include <json.hpp>

#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "relay_steer/errors.hpp"
#include "relay_steer/monte_carlo_report.hpp"
#include "relay_steer/scenario.hpp"
#include "relay_steer/sde_sim.hpp"

namespace relay_steer {

using json = nlohmann::json;

namespace detail {

inline json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw UsageError("scenario: " + what +
                     " must be a nonempty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw UsageError("scenario: ragged rows in " + what);
    }
    for (Eigen::Index k = 0; k < cols; ++k) M(i, k) = j[i][k].get<double>();
  }
  return M;
}

inline json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw UsageError("scenario: " + what + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

inline json matrix_function_to_json(const MatrixFunction& f) {
  if (!f.is_table()) return matrix_to_json(f.constant_value());
  json out;
  out["times"] = f.breakpoint_times();
  json vals = json::array();
  for (const Matrix& M : f.breakpoint_values()) {
    vals.push_back(matrix_to_json(M));
  }
  out["values"] = std::move(vals);
  return out;
}

inline MatrixFunction matrix_function_from_json(const json& j,
                                                const std::string& what) {
  if (j.is_array()) return MatrixFunction::constant(matrix_from_json(j, what));
  if (j.is_object() && j.contains("times") && j.contains("values")) {
    std::vector<double> times = j.at("times").get<std::vector<double>>();
    std::vector<Matrix> values;
    for (const auto& mj : j.at("values")) {
      values.push_back(matrix_from_json(mj, what + " table entry"));
    }
    try {
      return MatrixFunction::table(std::move(times), std::move(values));
    } catch (const std::exception& e) {
      throw UsageError("scenario: bad " + what + " table: " + e.what());
    }
  }
  throw UsageError("scenario: " + what +
                   " must be a matrix or a {times, values} table");
}

}  // namespace detail

inline json scenario_to_json(const Scenario& sc) {
  json j;
  j["n"] = sc.n;
  j["m"] = sc.m;
  j["d"] = sc.d;
  j["A"] = detail::matrix_function_to_json(sc.A);
  j["B"] = detail::matrix_function_to_json(sc.B);
  json sig;
  switch (sc.sigma.kind) {
    case DiffusionSpec::Kind::zero:
      sig["kind"] = "zero";
      break;
    case DiffusionSpec::Kind::linear: {
      sig["kind"] = "linear";
      json mats = json::array();
      for (const Matrix& S : sc.sigma.mats) {
        mats.push_back(detail::matrix_to_json(S));
      }
      sig["matrices"] = std::move(mats);
      break;
    }
    case DiffusionSpec::Kind::affine_zero: {
      sig["kind"] = "affine_zero";
      json mats = json::array();
      for (const Matrix& S : sc.sigma.mats) {
        mats.push_back(detail::matrix_to_json(S));
      }
      sig["matrices"] = std::move(mats);
      sig["y_zero"] = detail::vector_to_json(sc.sigma.y_star);
      break;
    }
    case DiffusionSpec::Kind::custom:
      throw UsageError("scenario: custom diffusions cannot be serialized");
  }
  j["sigma"] = std::move(sig);
  j["x"] = detail::vector_to_json(sc.x);
  j["y"] = detail::vector_to_json(sc.y);
  j["T"] = sc.T;
  j["rho"] = sc.rho;
  j["solver"] = {{"dt", sc.solver.dt},
                 {"epsilon", sc.solver.epsilon},
                 {"hit_tol", sc.solver.hit_tol}};
  j["ensemble"] = {{"paths", sc.ensemble.paths}, {"seed", sc.ensemble.seed}};
  return j;
}

inline Scenario scenario_from_json(const json& j) {
  Scenario sc;
  try {
    sc.n = j.at("n").get<int>();
    sc.m = j.at("m").get<int>();
    sc.d = j.at("d").get<int>();
    sc.A = detail::matrix_function_from_json(j.at("A"), "A");
    sc.B = detail::matrix_function_from_json(j.at("B"), "B");
    const json& sig = j.at("sigma");
    const std::string kind = sig.at("kind").get<std::string>();
    if (kind == "zero") {
      sc.sigma = DiffusionSpec::zero(sc.d);
    } else if (kind == "linear" || kind == "affine_zero") {
      std::vector<Matrix> mats;
      for (const auto& mj : sig.at("matrices")) {
        mats.push_back(detail::matrix_from_json(mj, "sigma matrix"));
      }
      if (kind == "linear") {
        sc.sigma = DiffusionSpec::linear(std::move(mats));
      } else {
        sc.sigma = DiffusionSpec::affine_zero(
            std::move(mats), detail::vector_from_json(sig.at("y_zero"),
                                                      "sigma.y_zero"));
      }
    } else {
      throw UsageError("scenario: unknown sigma kind '" + kind + "'");
    }
    sc.x = detail::vector_from_json(j.at("x"), "x");
    sc.y = detail::vector_from_json(j.at("y"), "y");
    sc.T = j.at("T").get<double>();
    sc.rho = j.at("rho").get<double>();
    if (j.contains("solver")) {
      const json& s = j.at("solver");
      if (s.contains("dt")) sc.solver.dt = s.at("dt").get<double>();
      if (s.contains("epsilon")) sc.solver.epsilon = s.at("epsilon").get<double>();
      if (s.contains("hit_tol")) sc.solver.hit_tol = s.at("hit_tol").get<double>();
    }
    if (j.contains("ensemble")) {
      const json& e = j.at("ensemble");
      if (e.contains("paths")) sc.ensemble.paths = e.at("paths").get<int>();
      if (e.contains("seed")) {
        sc.ensemble.seed = e.at("seed").get<std::uint64_t>();
      }
    }
  } catch (const RelayError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("scenario: malformed file: ") + e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open scenario file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("scenario: invalid JSON in " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write scenario file: " + path);
  out << scenario_to_json(sc).dump(2) << '\n';
}

namespace detail {

// Shortest decimal string that round-trips the double.
inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace detail

// One row per grid node: the control columns hold the input applied on
// [t_k, t_{k+1}) (zeros on the terminal row), hit_flag is 1 from the hit
// node onward.
inline void write_trajectory_csv(const TrajectoryResult& traj,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write trajectory file: " + path);
  const auto n = traj.states.cols();
  const auto m = traj.controls.cols();
  out << 't';
  for (Eigen::Index i = 1; i <= n; ++i) out << ",X_" << i;
  for (Eigen::Index i = 1; i <= m; ++i) out << ",u_" << i;
  out << ",hit_flag\n";
  for (Eigen::Index k = 0; k < traj.states.rows(); ++k) {
    out << detail::fmt(traj.grid.time(static_cast<int>(k)));
    for (Eigen::Index i = 0; i < n; ++i) {
      out << ',' << detail::fmt(traj.states(k, i));
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      out << ','
          << detail::fmt(k < traj.controls.rows() ? traj.controls(k, i) : 0.0);
    }
    const bool hit_now = traj.hit && k >= traj.tau_index;
    out << ',' << (hit_now ? 1 : 0) << '\n';
  }
}

inline json report_to_json(const EnsembleReport& rep) {
  json j;
  j["schema"] = "relay-steer/1";
  j["paths_run"] = rep.paths_run;
  j["hits"] = rep.hits;
  j["p_hat"] = rep.p_hat;
  j["wilson_lo"] = rep.wilson_lo;
  j["wilson_hi"] = rep.wilson_hi;
  j["bound_rhs"] = rep.bound_rhs;
  j["verdict"] = to_string(rep.verdict);
  j["T"] = rep.T;
  j["rho"] = rep.rho;
  j["C_star"] = rep.consts.C_star;
  j["gamma"] = rep.consts.gamma;
  j["excluded_divergent"] = rep.excluded_divergent;
  j["hold_infeasible_count"] = rep.hold_infeasible_count;
  if (rep.containment_enabled) {
    j["contained_count"] = rep.contained_count;
    if (rep.extension_enabled) {
      j["contained_ext_count"] = rep.contained_ext_count;
    }
  }
  return j;
}

// Writes <prefix>_summary.json, <prefix>_tau_histogram.csv,
// <prefix>_supermartingale.csv (all deterministic) and
// <prefix>_run_meta.json (timestamped).
inline void export_report(const EnsembleReport& rep, const std::string& prefix,
                          int workers_used = 1) {
  {
    std::ofstream out(prefix + "_summary.json");
    if (!out) throw UsageError("cannot write " + prefix + "_summary.json");
    out << report_to_json(rep).dump(2) << '\n';
  }
  {
    std::ofstream out(prefix + "_tau_histogram.csv");
    if (!out) throw UsageError("cannot write " + prefix + "_tau_histogram.csv");
    out << "bucket_lo,bucket_hi,count\n";
    const auto buckets = rep.tau_histogram.size();
    for (std::size_t b = 0; b < buckets; ++b) {
      const double lo = rep.T * static_cast<double>(b) / buckets;
      const double hi = rep.T * static_cast<double>(b + 1) / buckets;
      out << detail::fmt(lo) << ',' << detail::fmt(hi) << ','
          << rep.tau_histogram[b] << '\n';
    }
  }
  {
    std::ofstream out(prefix + "_supermartingale.csv");
    if (!out) {
      throw UsageError("cannot write " + prefix + "_supermartingale.csv");
    }
    out << "t,mean,se\n";
    const auto& ms = rep.mean_supermartingale;
    for (std::size_t k = 0; k < ms.times.size(); ++k) {
      out << detail::fmt(ms.times[k]) << ',' << detail::fmt(ms.mean[k]) << ','
          << detail::fmt(ms.se[k]) << '\n';
    }
  }
  {
    std::ofstream out(prefix + "_run_meta.json");
    if (!out) throw UsageError("cannot write " + prefix + "_run_meta.json");
    json meta;
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    meta["generated_at"] = buf;
    meta["tool"] = "relay-steer";
    meta["workers"] = workers_used;
    out << meta.dump(2) << '\n';
  }
}

}  // namespace relay_steer
