#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "relay_steer/errors.hpp"
#include "relay_steer/scenario.hpp"
#include "relay_steer/scenario_io.hpp"
#include "relay_steer/sde_sim.hpp"

using namespace relay_steer;
using Catch::Matchers::WithinAbs;

namespace {

Scenario make_reference() {
  Scenario sc;
  sc.n = sc.m = sc.d = 2;
  sc.A = MatrixFunction::constant(Matrix::Identity(2, 2));
  sc.B = MatrixFunction::constant(Matrix::Identity(2, 2));
  sc.sigma = DiffusionSpec::affine_zero(
      {0.5 * Matrix::Identity(2, 2), 0.5 * Matrix::Identity(2, 2)},
      Vector::Zero(2));
  sc.x = Vector::Zero(2);
  sc.x(0) = 1.0;
  sc.y = Vector::Zero(2);
  sc.T = 1.0;
  sc.rho = 15.819767068693265;
  sc.solver.dt = 1e-4;
  sc.solver.epsilon = 1e-3;
  sc.solver.hit_tol = 2e-4;
  sc.ensemble.paths = 1000;
  sc.ensemble.seed = 42;
  return sc;
}

}  // namespace

TEST_CASE("MatrixFunction constant evaluation") {
  Matrix M(2, 2);
  M << 1.0, 2.0, 3.0, 4.0;
  const MatrixFunction f = MatrixFunction::constant(M);
  CHECK_FALSE(f.is_table());
  CHECK(f(0.0) == M);
  CHECK(f(123.0) == M);
  CHECK(f.rows() == 2);
  CHECK(f.cols() == 2);
}

TEST_CASE("MatrixFunction table interpolates linearly and clamps") {
  const Matrix M0 = Matrix::Zero(1, 1);
  Matrix M1(1, 1);
  M1 << 2.0;
  const MatrixFunction f = MatrixFunction::table({1.0, 2.0}, {M0, M1});
  CHECK(f.is_table());
  CHECK_THAT(f(1.0)(0, 0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(f(1.5)(0, 0), WithinAbs(1.0, 1e-15));
  CHECK_THAT(f(1.75)(0, 0), WithinAbs(1.5, 1e-15));
  CHECK_THAT(f(2.0)(0, 0), WithinAbs(2.0, 1e-15));
  // Clamped outside the breakpoint range.
  CHECK_THAT(f(0.0)(0, 0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(f(5.0)(0, 0), WithinAbs(2.0, 1e-15));
}

TEST_CASE("MatrixFunction table validation") {
  const Matrix M = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(MatrixFunction::table({1.0}, {M}), NumericalError);
  CHECK_THROWS_AS(MatrixFunction::table({2.0, 1.0}, {M, M}), NumericalError);
  CHECK_THROWS_AS(MatrixFunction::table({1.0, 2.0}, {M, Matrix::Zero(2, 2)}),
                  NumericalError);
}

TEST_CASE("solver defaults: dt, hit tolerance, step count") {
  Scenario sc = make_reference();
  sc.solver.dt = 0.0;
  CHECK_THAT(sc.dt_or_default(), WithinAbs(1e-4, 1e-18));  // T / 1e4
  sc.solver.dt = 1e-3;
  CHECK(sc.steps() == 1000);
  sc.solver.hit_tol = 0.0;
  // Default 1e-4 * (1 + |x - y|) with |x - y| = 1.
  CHECK_THAT(sc.hit_tol_or_default(), WithinAbs(2e-4, 1e-18));
  sc.solver.hit_tol = 5e-3;
  CHECK_THAT(sc.hit_tol_or_default(), WithinAbs(5e-3, 1e-18));
}

TEST_CASE("validate accepts the reference scenario") {
  CHECK_NOTHROW(make_reference().validate());
}

TEST_CASE("validate rejects a diffusion that does not vanish at the target") {
  Scenario sc = make_reference();
  sc.y = Vector::Ones(2);  // sigma_j(y) = 0.5 (y - 0) != 0
  try {
    sc.validate();
    FAIL("expected HypothesisError");
  } catch (const HypothesisError& e) {
    CHECK(std::string(e.what()).find("sigma(y)") != std::string::npos);
    CHECK(e.exit_code == 3);
  }
}

TEST_CASE("validate rejects a control operator without uniform rank") {
  Scenario sc = make_reference();
  Matrix B(2, 2);
  B << 1.0, 0.0, 1.0, 0.0;  // rank 1
  sc.B = MatrixFunction::constant(B);
  try {
    sc.validate(/*closed_loop=*/true);
    FAIL("expected HypothesisError");
  } catch (const HypothesisError& e) {
    CHECK(std::string(e.what()).find("gamma_lower_bound") != std::string::npos);
  }
  // Open-loop validation does not need the ellipticity hypothesis.
  CHECK_NOTHROW(sc.validate(/*closed_loop=*/false));
}

TEST_CASE("validate rejects shape mismatches") {
  Scenario sc = make_reference();
  sc.x = Vector::Zero(3);
  CHECK_THROWS_AS(sc.validate(), HypothesisError);
}

TEST_CASE("scenario JSON round trip preserves every field") {
  const Scenario sc = make_reference();
  const json j = scenario_to_json(sc);
  const Scenario rt = scenario_from_json(j);
  CHECK(rt.n == 2);
  CHECK(rt.m == 2);
  CHECK(rt.d == 2);
  CHECK(rt.A(0.0) == sc.A(0.0));
  CHECK(rt.B(0.3) == sc.B(0.3));
  CHECK(rt.sigma.kind == DiffusionSpec::Kind::affine_zero);
  CHECK(rt.sigma.mats.size() == 2);
  CHECK(rt.sigma.mats[1] == sc.sigma.mats[1]);
  CHECK(rt.sigma.y_star == sc.sigma.y_star);
  CHECK(rt.x == sc.x);
  CHECK(rt.y == sc.y);
  CHECK(rt.T == sc.T);
  CHECK(rt.rho == sc.rho);
  CHECK(rt.solver.dt == sc.solver.dt);
  CHECK(rt.solver.epsilon == sc.solver.epsilon);
  CHECK(rt.solver.hit_tol == sc.solver.hit_tol);
  CHECK(rt.ensemble.paths == sc.ensemble.paths);
  CHECK(rt.ensemble.seed == sc.ensemble.seed);
}

TEST_CASE("scenario JSON round trip for tables and zero diffusion") {
  Scenario sc;
  sc.n = sc.m = sc.d = 1;
  Matrix A0(1, 1), A1(1, 1);
  A0 << 1.0;
  A1 << 3.0;
  sc.A = MatrixFunction::table({0.0, 1.0}, {A0, A1});
  sc.B = MatrixFunction::constant(Matrix::Identity(1, 1));
  sc.sigma = DiffusionSpec::zero(1);
  sc.x = Vector::Ones(1);
  sc.y = Vector::Zero(1);
  sc.T = 1.0;
  sc.rho = 2.0;
  const Scenario rt = scenario_from_json(scenario_to_json(sc));
  CHECK(rt.A.is_table());
  CHECK_THAT(rt.A(0.5)(0, 0), WithinAbs(2.0, 1e-15));
  CHECK(rt.sigma.kind == DiffusionSpec::Kind::zero);
  CHECK_NOTHROW(rt.validate());
}

TEST_CASE("malformed scenario files raise usage errors") {
  CHECK_THROWS_AS(load_scenario("/nonexistent/path.json"), UsageError);

  const std::string bad_json = "/tmp/relay_steer_bad1.json";
  std::ofstream(bad_json) << "{ not json";
  CHECK_THROWS_AS(load_scenario(bad_json), UsageError);

  const std::string bad_kind = "/tmp/relay_steer_bad2.json";
  std::ofstream(bad_kind) << R"({"n":1,"m":1,"d":1,"A":[[0.0]],"B":[[1.0]],
    "sigma":{"kind":"mystery"},"x":[1.0],"y":[0.0],"T":1.0,"rho":1.0})";
  CHECK_THROWS_AS(load_scenario(bad_kind), UsageError);

  const std::string missing = "/tmp/relay_steer_bad3.json";
  std::ofstream(missing) << R"({"n":1,"m":1})";
  CHECK_THROWS_AS(load_scenario(missing), UsageError);

  std::remove(bad_json.c_str());
  std::remove(bad_kind.c_str());
  std::remove(missing.c_str());
}

TEST_CASE("scenario file save/load round trip") {
  const std::string path = "/tmp/relay_steer_roundtrip.json";
  const Scenario sc = make_reference();
  save_scenario(sc, path);
  const Scenario rt = load_scenario(path);
  CHECK(rt.rho == sc.rho);
  CHECK(rt.sigma.mats[0] == sc.sigma.mats[0]);
  std::remove(path.c_str());
}

TEST_CASE("trajectory CSV schema") {
  Scenario sc = make_reference();
  sc.solver.dt = 1e-2;  // 100 steps, fast
  const TimeGrid grid(sc.T, sc.steps());
  const BrownianPath path = sample_brownian(grid, sc.d, 1, 0);
  const TrajectoryResult traj = integrate_closed_loop(
      sc, path, SignRegularization::smoothed(sc.solver.epsilon),
      sc.hit_tol_or_default());
  const std::string out = "/tmp/relay_steer_traj.csv";
  write_trajectory_csv(traj, out);

  std::ifstream in(out);
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header == "t,X_1,X_2,u_1,u_2,hit_flag");
  int rows = 0;
  std::string line;
  std::string first_line;
  while (std::getline(in, line)) {
    if (rows == 0) first_line = line;
    ++rows;
  }
  CHECK(rows == grid.steps + 1);
  // First row starts at t = 0 with X = x.
  std::istringstream fl(first_line);
  std::string cell;
  std::getline(fl, cell, ',');
  CHECK_THAT(std::stod(cell), WithinAbs(0.0, 0.0));
  std::getline(fl, cell, ',');
  CHECK_THAT(std::stod(cell), WithinAbs(1.0, 0.0));
  std::remove(out.c_str());
}

TEST_CASE("report export writes deterministic data files") {
  EnsembleReport rep;
  rep.paths_run = 10;
  rep.hits = 9;
  rep.p_hat = 0.9;
  rep.wilson_lo = 0.5;
  rep.wilson_hi = 0.99;
  rep.bound_rhs = 0.4;
  rep.verdict = Verdict::bound_satisfied;
  rep.T = 1.0;
  rep.rho = 2.0;
  rep.consts.C_star = 1.0;
  rep.consts.gamma = 1.0;
  rep.tau_histogram = {3, 4, 2};
  rep.mean_supermartingale.times = {0.0, 0.5, 1.0};
  rep.mean_supermartingale.mean = {1.0, 0.5, 0.25};
  rep.mean_supermartingale.se = {0.0, 0.01, 0.02};

  export_report(rep, "/tmp/relay_steer_rep");
  export_report(rep, "/tmp/relay_steer_rep2");

  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  // Data files are byte-identical across exports.
  CHECK(slurp("/tmp/relay_steer_rep_summary.json") ==
        slurp("/tmp/relay_steer_rep2_summary.json"));
  CHECK(slurp("/tmp/relay_steer_rep_tau_histogram.csv") ==
        slurp("/tmp/relay_steer_rep2_tau_histogram.csv"));
  CHECK(slurp("/tmp/relay_steer_rep_supermartingale.csv") ==
        slurp("/tmp/relay_steer_rep2_supermartingale.csv"));

  const std::string summary = slurp("/tmp/relay_steer_rep_summary.json");
  CHECK(summary.find("\"schema\": \"relay-steer/1\"") != std::string::npos);
  CHECK(summary.find("\"verdict\": \"bound_satisfied\"") != std::string::npos);
  CHECK(summary.find("generated_at") == std::string::npos);

  const std::string hist = slurp("/tmp/relay_steer_rep_tau_histogram.csv");
  CHECK(hist.rfind("bucket_lo,bucket_hi,count\n", 0) == 0);

  const std::string meta = slurp("/tmp/relay_steer_rep_run_meta.json");
  CHECK(meta.find("generated_at") != std::string::npos);

  for (const char* p :
       {"/tmp/relay_steer_rep", "/tmp/relay_steer_rep2"}) {
    std::remove((std::string(p) + "_summary.json").c_str());
    std::remove((std::string(p) + "_tau_histogram.csv").c_str());
    std::remove((std::string(p) + "_supermartingale.csv").c_str());
    std::remove((std::string(p) + "_run_meta.json").c_str());
  }
}
