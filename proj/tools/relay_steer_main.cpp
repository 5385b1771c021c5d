// relay-steer: command-line front end for the relay steering toolkit.
//
// Subcommands: simulate, montecarlo, bound, linear-noise, kalman-steer, heat.
// Exit codes: 0 success, 2 usage errors, 3 hypothesis violations, 4 numerical
// failures. Data outputs are byte-identical across reruns with the same
// configuration (timestamps live only in <prefix>_run_meta.json).

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "relay_steer/heat_galerkin.hpp"
#include "relay_steer/kalman_null.hpp"
#include "relay_steer/linear_noise.hpp"
#include "relay_steer/monte_carlo.hpp"
#include "relay_steer/scenario_io.hpp"
#include "relay_steer/sde_sim.hpp"

namespace rs = relay_steer;

namespace {

int resolve_workers(const CLI::Option* opt, int cli_value) {
  if (opt && opt->count() > 0) {
    if (cli_value < 1) throw rs::UsageError("--workers must be >= 1");
    return cli_value;
  }
  if (const char* env = std::getenv("RELAY_STEER_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (...) {
    }
    throw rs::UsageError("RELAY_STEER_WORKERS must be a positive integer");
  }
  return 1;
}

struct ScenarioOverrides {
  CLI::Option* seed_opt = nullptr;
  CLI::Option* paths_opt = nullptr;
  CLI::Option* dt_opt = nullptr;
  CLI::Option* epsilon_opt = nullptr;
  CLI::Option* hit_tol_opt = nullptr;
  std::uint64_t seed = 0;
  int paths = 0;
  double dt = 0.0;
  double epsilon = 0.0;
  double hit_tol = 0.0;

  void attach(CLI::App* cmd, bool with_paths) {
    seed_opt = cmd->add_option("--seed", seed, "Base RNG seed override");
    if (with_paths) {
      paths_opt = cmd->add_option("--paths", paths, "Monte Carlo path count");
    }
    dt_opt = cmd->add_option("--dt", dt, "Time step override");
    epsilon_opt =
        cmd->add_option("--epsilon", epsilon, "Sign-smoothing width override");
    hit_tol_opt =
        cmd->add_option("--hit-tol", hit_tol, "Hit detection tolerance");
  }

  void apply(rs::Scenario& sc) const {
    if (seed_opt && seed_opt->count()) sc.ensemble.seed = seed;
    if (paths_opt && paths_opt->count()) {
      if (paths < 1) throw rs::UsageError("--paths must be >= 1");
      sc.ensemble.paths = paths;
    }
    if (dt_opt && dt_opt->count()) {
      if (!(dt > 0.0)) throw rs::UsageError("--dt must be positive");
      sc.solver.dt = dt;
    }
    if (epsilon_opt && epsilon_opt->count()) {
      if (!(epsilon > 0.0)) throw rs::UsageError("--epsilon must be positive");
      sc.solver.epsilon = epsilon;
    }
    if (hit_tol_opt && hit_tol_opt->count()) {
      if (!(hit_tol > 0.0)) throw rs::UsageError("--hit-tol must be positive");
      sc.solver.hit_tol = hit_tol;
    }
  }
};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::vector<rs::Matrix> require_linear_sigma(const rs::Scenario& sc,
                                             const std::string& cmd) {
  if (sc.sigma.kind != rs::DiffusionSpec::Kind::linear) {
    throw rs::UsageError(cmd + ": scenario sigma kind must be \"linear\"");
  }
  return sc.sigma.mats;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string scenario_path;
  ScenarioOverrides ov;
  std::string dump_path;
};

int run_simulate(const SimulateArgs& args) {
  rs::Scenario sc = rs::load_scenario(args.scenario_path);
  args.ov.apply(sc);
  sc.validate(/*closed_loop=*/true);
  const rs::TimeGrid grid(sc.T, sc.steps());
  const rs::BrownianPath path =
      rs::sample_brownian(grid, sc.d, sc.ensemble.seed, /*stream=*/0);
  const rs::TrajectoryResult traj = rs::integrate_closed_loop(
      sc, path, rs::SignRegularization::smoothed(sc.solver.epsilon),
      sc.hit_tol_or_default());
  if (!args.dump_path.empty()) rs::write_trajectory_csv(traj, args.dump_path);
  const double terminal =
      (traj.states.row(traj.states.rows() - 1).transpose() - sc.y).norm();
  std::cout << "hit=" << (traj.hit ? 1 : 0)
            << " tau=" << (traj.hit ? num(*traj.tau_hat) : "nan")
            << " terminal_dist=" << num(terminal)
            << " max_control=" << num(traj.max_control_norm)
            << " held=" << (traj.held ? 1 : 0)
            << " diverged=" << (traj.diverged ? 1 : 0) << '\n';
  return traj.diverged ? 4 : 0;
}

// -------------------------------------------------------------- montecarlo

struct MonteCarloArgs {
  std::string scenario_path;
  ScenarioOverrides ov;
  CLI::Option* workers_opt = nullptr;
  int workers = 1;
  std::string output_prefix;
};

int run_montecarlo(const MonteCarloArgs& args) {
  rs::Scenario sc = rs::load_scenario(args.scenario_path);
  args.ov.apply(sc);
  sc.validate(/*closed_loop=*/true);
  rs::RunOptions opts;
  opts.workers = resolve_workers(args.workers_opt, args.workers);
  const rs::EnsembleReport rep = rs::run_ensemble(
      sc, sc.ensemble.paths, sc.ensemble.seed,
      rs::SignRegularization::smoothed(sc.solver.epsilon), 0.0, opts);
  if (!args.output_prefix.empty()) {
    rs::export_report(rep, args.output_prefix, opts.workers);
  }
  std::cout << "p_hat=" << num(rep.p_hat) << " wilson_lo=" << num(rep.wilson_lo)
            << " wilson_hi=" << num(rep.wilson_hi)
            << " bound=" << num(rep.bound_rhs)
            << " verdict=" << rs::to_string(rep.verdict)
            << " paths=" << rep.paths_run << " hits=" << rep.hits << '\n';
  return 0;
}

// ------------------------------------------------------------------- bound

struct BoundArgs {
  std::string scenario_path;
  CLI::Option* confidence_opt = nullptr;
  double confidence = 0.0;
};

int run_bound(const BoundArgs& args) {
  rs::Scenario sc = rs::load_scenario(args.scenario_path);
  sc.validate(/*closed_loop=*/true);
  const rs::BoundConstants consts = rs::bound_constants(sc);
  const double bound =
      rs::success_probability_lower_bound(consts, sc.x, sc.y, sc.T, sc.rho);
  std::ostringstream line;
  line << "C_star=" << num(consts.C_star) << " gamma=" << num(consts.gamma)
       << " eta=" << num(consts.eta) << " rho=" << num(sc.rho)
       << " bound=" << num(bound);
  if (args.confidence_opt && args.confidence_opt->count()) {
    line << " rho_needed="
         << num(rs::rho_for_confidence(consts, sc.x, sc.y, sc.T,
                                       args.confidence));
  }
  std::cout << line.str() << '\n';
  return 0;
}

// ------------------------------------------------------------ linear-noise

struct LinearNoiseArgs {
  std::string scenario_path;
  ScenarioOverrides ov;
  std::vector<double> target_state;
  std::vector<double> target_transformed;
  std::string dump_path;
};

int run_linear_noise(const LinearNoiseArgs& args) {
  rs::Scenario sc = rs::load_scenario(args.scenario_path);
  args.ov.apply(sc);
  sc.validate(/*closed_loop=*/false);
  const std::vector<rs::Matrix> sigmas = require_linear_sigma(sc, "linear-noise");
  if (!args.target_state.empty() && !args.target_transformed.empty()) {
    throw rs::UsageError(
        "linear-noise: give at most one of --target-state / "
        "--target-transformed");
  }
  rs::SteerTarget target = rs::SteerTarget::state(sc.y);
  if (!args.target_state.empty()) {
    target = rs::SteerTarget::state(Eigen::Map<const rs::Vector>(
        args.target_state.data(), static_cast<Eigen::Index>(args.target_state.size())));
  } else if (!args.target_transformed.empty()) {
    target = rs::SteerTarget::transformed(Eigen::Map<const rs::Vector>(
        args.target_transformed.data(),
        static_cast<Eigen::Index>(args.target_transformed.size())));
  }
  if (target.v.size() != sc.n) {
    throw rs::UsageError("linear-noise: target length must equal n");
  }
  const rs::TimeGrid grid(sc.T, sc.steps());
  const rs::BrownianPath path =
      rs::sample_brownian(grid, sc.d, sc.ensemble.seed, /*stream=*/0);
  const rs::EquivalenceResult eq = rs::transformation_equivalence(
      sc.A, sc.B, sigmas, sc.x, target, path, sc.solver.epsilon);
  const rs::PathwiseSteerResult& st = eq.transformed;
  if (!st.consts.sufficiency_ok) {
    std::cerr << "warning: rho_tilde fails the sufficiency inequality "
                 "(relative shortfall "
              << num(st.consts.sufficiency_shortfall)
              << "); steering may converge late on some paths\n";
  }
  if (!args.dump_path.empty()) {
    std::ofstream out(args.dump_path);
    if (!out) {
      throw rs::UsageError("cannot write trajectory file: " + args.dump_path);
    }
    out << 't';
    for (int i = 1; i <= sc.n; ++i) out << ",y_" << i;
    for (int i = 1; i <= sc.n; ++i) out << ",X_" << i;
    out << '\n';
    out << std::setprecision(17);
    for (Eigen::Index k = 0; k < st.y_path.rows(); ++k) {
      out << grid.time(static_cast<int>(k));
      for (int i = 0; i < sc.n; ++i) out << ',' << st.y_path(k, i);
      for (int i = 0; i < sc.n; ++i) out << ',' << st.X_path(k, i);
      out << '\n';
    }
  }
  std::cout << "rho_tilde=" << num(st.consts.rho_tilde)
            << " C1_star_inv=" << num(st.consts.C1_star_inv)
            << " C2_star=" << num(st.consts.C2_star)
            << " terminal_error=" << num(st.terminal_error)
            << " success=" << (st.success ? 1 : 0)
            << " sup_discrepancy=" << num(eq.sup_discrepancy)
            << " sufficiency_ok=" << (st.consts.sufficiency_ok ? 1 : 0)
            << '\n';
  return 0;
}

// ------------------------------------------------------------ kalman-steer

struct KalmanArgs {
  std::string scenario_path;
  std::vector<double> a_coeffs;
  std::vector<double> b_coeffs;
  std::vector<double> x0;
  CLI::Option* order_opt = nullptr;
  int order = 0;
  double T = 1.0;
  double dt = 1e-4;
  int paths = 100;
  std::uint64_t seed = 0;
  std::string dump_path;
};

int run_kalman(const KalmanArgs& args) {
  rs::Matrix A, B, sigma;
  rs::Vector x;
  double T = args.T;
  int steps = 0;
  int paths = args.paths;
  std::uint64_t seed = args.seed;
  if (!args.a_coeffs.empty() || !args.b_coeffs.empty()) {
    if (args.a_coeffs.empty() || args.b_coeffs.empty()) {
      throw rs::UsageError("kalman-steer: --a and --b must be given together");
    }
    if (args.order_opt && args.order_opt->count() &&
        (args.order != static_cast<int>(args.a_coeffs.size()))) {
      throw rs::UsageError("kalman-steer: --order disagrees with --a length");
    }
    rs::companion_system(args.a_coeffs, args.b_coeffs, A, B, sigma);
    const int n = static_cast<int>(A.rows());
    if (!args.x0.empty()) {
      if (static_cast<int>(args.x0.size()) != n) {
        throw rs::UsageError("kalman-steer: --x length must equal the order");
      }
      x = Eigen::Map<const rs::Vector>(args.x0.data(), n);
    } else {
      x = rs::Vector::Zero(n);
      x(0) = 1.0;
    }
    if (!(args.dt > 0.0) || !(T > 0.0)) {
      throw rs::UsageError("kalman-steer: need T > 0 and --dt > 0");
    }
    steps = std::max(1, static_cast<int>(std::llround(T / args.dt)));
  } else if (!args.scenario_path.empty()) {
    rs::Scenario sc = rs::load_scenario(args.scenario_path);
    sc.validate(/*closed_loop=*/false);
    if (sc.d != 1) {
      throw rs::UsageError("kalman-steer: scenario must have d = 1");
    }
    const std::vector<rs::Matrix> sigmas =
        require_linear_sigma(sc, "kalman-steer");
    if (sc.A.is_table() || sc.B.is_table()) {
      throw rs::UsageError("kalman-steer: A and B must be constant");
    }
    A = sc.A(0.0);
    B = sc.B(0.0);
    sigma = sigmas[0];
    x = sc.x;
    T = sc.T;
    steps = sc.steps();
    paths = sc.ensemble.paths;
    seed = sc.ensemble.seed;
  } else {
    throw rs::UsageError(
        "kalman-steer: give a scenario file or the --a/--b coefficient "
        "shortcut");
  }
  const rs::NullSteerResult res =
      rs::null_steer_ensemble(A, B, sigma, x, T, steps, paths, seed);
  if (!args.dump_path.empty()) {
    std::ofstream out(args.dump_path);
    if (!out) {
      throw rs::UsageError("cannot write plan file: " + args.dump_path);
    }
    const auto n = res.plan.y_det.cols();
    const auto m = res.plan.u_det.cols();
    out << 't';
    for (Eigen::Index i = 1; i <= n; ++i) out << ",y_" << i;
    for (Eigen::Index i = 1; i <= m; ++i) out << ",u_" << i;
    out << '\n';
    out << std::setprecision(17);
    for (Eigen::Index k = 0; k < res.plan.y_det.rows(); ++k) {
      out << res.plan.grid.time(static_cast<int>(k));
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << res.plan.y_det(k, i);
      for (Eigen::Index i = 0; i < m; ++i) {
        out << ',' << (k < res.plan.u_det.rows() ? res.plan.u_det(k, i) : 0.0);
      }
      out << '\n';
    }
  }
  std::cout << "K=" << res.plan.truncation_K
            << " plan_terminal=" << num(res.plan.terminal_error)
            << " mean_terminal=" << num(res.mean_terminal)
            << " median_terminal=" << num(res.median_terminal)
            << " max_terminal=" << num(res.max_terminal)
            << " paths=" << res.paths << '\n';
  return 0;
}

// -------------------------------------------------------------------- heat

struct HeatArgs {
  int modes = 8;
  int channels = 2;
  std::vector<double> region{0.3, 0.8};
  double eps = 0.1;
  int paths = 1000;
  std::uint64_t seed = 0;
  double T = 0.15;
  double dt = 1e-5;
  double hit_tol = 2e-4;
  std::string initial = "e1";
  CLI::Option* workers_opt = nullptr;
  int workers = 1;
  std::string output_prefix;
};

int run_heat(const HeatArgs& args) {
  if (args.region.size() != 2) {
    throw rs::UsageError("heat: --region needs two values a,b");
  }
  if (args.modes < 1 || args.channels < 1) {
    throw rs::UsageError("heat: --modes and --noise-channels must be >= 1");
  }
  const rs::GalerkinModel model = rs::make_galerkin_model(
      args.modes, args.channels, args.region[0], args.region[1]);
  rs::Vector x(args.modes);
  double x_norm_sq = 0.0;
  if (args.initial == "e1") {
    x.setZero();
    x(0) = 1.0;
    x_norm_sq = 1.0;
  } else if (args.initial == "parabola") {
    // x(xi) = xi (1 - xi): coefficients 4 sqrt(2) / (j pi)^3 for odd j.
    for (int j = 1; j <= args.modes; ++j) {
      const double jp = j * std::numbers::pi;
      x(j - 1) = (j % 2 == 1) ? 4.0 * std::numbers::sqrt2 / (jp * jp * jp) : 0.0;
    }
    x_norm_sq = 1.0 / 30.0;
  } else {
    throw rs::UsageError("heat: --initial must be e1 or parabola");
  }
  rs::HeatExperimentOptions opts;
  opts.T = args.T;
  opts.dt = args.dt;
  opts.hit_tol = args.hit_tol;
  opts.workers = resolve_workers(args.workers_opt, args.workers);
  opts.x_norm_sq = x_norm_sq;
  const rs::HeatExperimentReport rep = rs::approximate_controllability_experiment(
      x, model, args.eps, args.paths, args.seed, opts);
  if (rep.rho_capped) {
    std::cerr << "warning: required gain " << num(rep.rho_required)
              << " exceeds the cap " << num(rs::kRhoCap) << " (gamma_N = "
              << num(rep.gamma_N)
              << "): probability guarantee unavailable, running at the cap "
                 "with smoothing width " << num(rep.eps_reg_used) << '\n';
  }
  if (!args.output_prefix.empty()) {
    rs::export_report(rep.ensemble, args.output_prefix, opts.workers);
  }
  std::cout << "p_contained=" << num(rep.p_contained)
            << " wilson_lo=" << num(rep.contained_lo)
            << " wilson_hi=" << num(rep.contained_hi)
            << " target=" << num(1.0 - rep.eps)
            << " verdict=" << rs::to_string(rep.verdict)
            << " p_contained_ext=" << num(rep.p_contained_ext)
            << " rho_used=" << num(rep.rho_used)
            << " rho_required=" << num(rep.rho_required)
            << " capped=" << (rep.rho_capped ? 1 : 0)
            << " gamma_N=" << num(rep.gamma_N)
            << " spectral_tail=" << num(rep.spectral_tail_norm) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "relay-steer: simulation and verification toolkit for relay-feedback "
      "steering of stochastic systems with multiplicative noise"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Integrate one closed-loop relay trajectory");
  simulate->add_option("scenario", sim.scenario_path, "Scenario JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  sim.ov.attach(simulate, /*with_paths=*/false);
  simulate->add_option("--dump-path", sim.dump_path,
                       "Write the trajectory as CSV (t, X, u, hit_flag)");

  MonteCarloArgs mc;
  CLI::App* montecarlo = app.add_subcommand(
      "montecarlo", "Estimate the hitting probability over an ensemble");
  montecarlo->add_option("scenario", mc.scenario_path, "Scenario JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  mc.ov.attach(montecarlo, /*with_paths=*/true);
  mc.workers_opt =
      montecarlo->add_option("--workers", mc.workers, "Worker thread count");
  montecarlo->add_option("--output", mc.output_prefix,
                         "Prefix for report files");

  BoundArgs bd;
  CLI::App* bound = app.add_subcommand(
      "bound", "Evaluate the hitting-probability lower bound");
  bound->add_option("scenario", bd.scenario_path, "Scenario JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  bd.confidence_opt = bound->add_option(
      "--confidence", bd.confidence,
      "Also print the gain required for this success probability");

  LinearNoiseArgs ln;
  CLI::App* linear_noise = app.add_subcommand(
      "linear-noise",
      "Pathwise steering through the fundamental-solution transformation");
  linear_noise->add_option("scenario", ln.scenario_path, "Scenario JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  ln.ov.attach(linear_noise, /*with_paths=*/false);
  linear_noise->add_option("--target-state", ln.target_state,
                           "Terminal state target X_T (comma separated)")
      ->delimiter(',');
  linear_noise->add_option(
      "--target-transformed", ln.target_transformed,
      "Target for the transformed variable y_T (comma separated)")
      ->delimiter(',');
  linear_noise->add_option("--dump-path", ln.dump_path,
                           "Write the steered pair (t, y, X) as CSV");

  KalmanArgs ka;
  CLI::App* kalman = app.add_subcommand(
      "kalman-steer",
      "Exact null steering under the Kalman rank condition (d = 1)");
  kalman->add_option("scenario", ka.scenario_path, "Scenario JSON file")
      ->check(CLI::ExistingFile);
  ka.order_opt = kalman->add_option("--order", ka.order,
                                    "Order n of the companion system");
  kalman->add_option("--a", ka.a_coeffs,
                     "Companion drift coefficients a_1..a_n")
      ->delimiter(',');
  kalman->add_option("--b", ka.b_coeffs,
                     "Companion noise coefficients b_1..b_n")
      ->delimiter(',');
  kalman->add_option("--x", ka.x0, "Initial state (default e_1)")
      ->delimiter(',');
  kalman->add_option("-T,--horizon", ka.T, "Horizon (shortcut mode)");
  kalman->add_option("--dt", ka.dt, "Time step (shortcut mode)");
  kalman->add_option("--paths", ka.paths, "Path count (shortcut mode)");
  kalman->add_option("--seed", ka.seed, "Base RNG seed (shortcut mode)");
  kalman->add_option("--dump-path", ka.dump_path,
                     "Write the deterministic plan as CSV");

  HeatArgs ht;
  CLI::App* heat = app.add_subcommand(
      "heat",
      "Approximate controllability of the truncated stochastic heat equation");
  heat->add_option("--modes", ht.modes, "Number of eigenmodes N");
  heat->add_option("--noise-channels", ht.channels, "Noise channel count d");
  heat->add_option("--region", ht.region, "Control region a,b in (0,1)")
      ->delimiter(',');
  heat->add_option("--eps", ht.eps, "Target ball radius / failure budget");
  heat->add_option("--paths", ht.paths, "Monte Carlo path count");
  heat->add_option("--seed", ht.seed, "Base RNG seed");
  heat->add_option("-T,--horizon", ht.T, "Horizon");
  heat->add_option("--dt", ht.dt, "Time step");
  heat->add_option("--hit-tol", ht.hit_tol, "Hit detection tolerance");
  heat->add_option("--initial", ht.initial,
                   "Initial profile: e1 or parabola (= xi(1-xi))");
  ht.workers_opt = heat->add_option("--workers", ht.workers,
                                    "Worker thread count");
  heat->add_option("--output", ht.output_prefix, "Prefix for report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (montecarlo->parsed()) return run_montecarlo(mc);
    if (bound->parsed()) return run_bound(bd);
    if (linear_noise->parsed()) return run_linear_noise(ln);
    if (kalman->parsed()) return run_kalman(ka);
    if (heat->parsed()) return run_heat(ht);
  } catch (const rs::RelayError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
