#pragma once

// Explicit Euler-Maruyama drivers for the controlled SDE
//   X_{k+1} = X_k - A(t_k) X_k dt + B(t_k) u_k dt + sigma(X_k) dW_k,
// with grid hit detection (first node with |X_k - y| <= hit_tol), optional
// post-hit holding (state pinned to y by the holding control selection), and
// a divergence guard at |X| > 1e12.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relay_steer/brownian.hpp"
#include "relay_steer/errors.hpp"
#include "relay_steer/relay_control.hpp"
#include "relay_steer/scenario.hpp"

namespace relay_steer {

inline constexpr double kDivergenceGuard = 1e12;

struct TrajectoryResult {
  TimeGrid grid;
  Eigen::MatrixXd states;    // (steps+1) x n
  Eigen::MatrixXd controls;  // steps x m
  bool hit = false;
  std::optional<double> tau_hat;
  int tau_index = -1;
  bool held = false;             // holding active after the hit
  bool hold_infeasible = false;  // holding was requested but |u_hold| > rho
  bool diverged = false;
  double max_control_norm = 0.0;
  std::map<std::string, Eigen::VectorXd> diagnostics;
};

namespace detail {

// Shared integration loop. `control` maps (k, t_k, X_k) to u_k. When
// `hold_enabled`, the state is pinned to y once the hit criterion fires and
// the holding selection is feasible; controls are then recorded from it.
inline TrajectoryResult em_integrate(
    const Scenario& sc, const BrownianPath& path,
    const std::function<Vector(int, double, const Vector&)>& control,
    double hit_tol, bool hold_enabled, int steps_limit = -1) {
  const int steps = steps_limit >= 0 ? steps_limit : path.grid.steps;
  if (steps < 1 || steps > path.grid.steps) {
    throw NumericalError("em_integrate: invalid step limit");
  }
  if (path.d != sc.d) {
    throw NumericalError("em_integrate: path channel count != scenario d");
  }
  const double dt = path.grid.dt();
  const int n = sc.n;

  TrajectoryResult out;
  out.grid = TimeGrid(dt * steps, steps);
  out.states.resize(steps + 1, n);
  out.controls.resize(steps, sc.m);

  const bool Avar = sc.A.is_table();
  const bool Bvar = sc.B.is_table();
  const Matrix Aconst = sc.A(0.0);
  const Matrix Bconst = sc.B(0.0);
  Matrix Atab, Btab;  // reused storage for the table-valued case

  Vector X = sc.x;
  out.states.row(0) = X;
  bool holding = false;

  auto try_begin_hold = [&](double t) {
    if (!hold_enabled) return;
    if (auto u = hold_control(t, sc)) {
      holding = true;
      out.held = true;
    } else {
      out.hold_infeasible = true;
    }
  };

  if ((X - sc.y).norm() <= hit_tol) {
    out.hit = true;
    out.tau_hat = 0.0;
    out.tau_index = 0;
    try_begin_hold(0.0);
  }

  Vector Xnew(n);
  for (int k = 0; k < steps; ++k) {
    const double t = out.grid.time(k);
    if (Avar) Atab = sc.A(t);
    if (Bvar) Btab = sc.B(t);
    const Matrix& At = Avar ? Atab : Aconst;
    const Matrix& Bt = Bvar ? Btab : Bconst;

    if (holding) {
      auto u = hold_control(t, sc);
      if (u) {
        out.controls.row(k) = *u;
        out.max_control_norm = std::max(out.max_control_norm, u->norm());
        out.states.row(k + 1) = sc.y;
        X = sc.y;
        continue;
      }
      holding = false;  // feasibility lost (time-varying A/B); fall through
      out.hold_infeasible = true;
    }

    const Vector u = control(k, t, X);
    out.controls.row(k) = u;
    out.max_control_norm = std::max(out.max_control_norm, u.norm());

    Xnew = X;
    Xnew.noalias() -= dt * (At * X);
    Xnew.noalias() += dt * (Bt * u);
    sc.sigma.accumulate(X, path.increments.row(k), Xnew);

    if (!Xnew.allFinite() || Xnew.norm() > kDivergenceGuard) {
      out.diverged = true;
      for (int j = k + 1; j <= steps; ++j) out.states.row(j) = Xnew;
      for (int j = k + 1; j < steps; ++j) out.controls.row(j).setZero();
      return out;
    }

    X = Xnew;
    if (!out.hit && (X - sc.y).norm() <= hit_tol) {
      out.hit = true;
      out.tau_hat = out.grid.time(k + 1);
      out.tau_index = k + 1;
      try_begin_hold(out.grid.time(k + 1));
      if (holding) X = sc.y;  // discrete absorption at the target
    }
    out.states.row(k + 1) = X;
  }
  return out;
}

}  // namespace detail

// Closed-loop relay integration with post-hit holding (default on).
inline TrajectoryResult integrate_closed_loop(const Scenario& sc,
                                              const BrownianPath& path,
                                              const SignRegularization& reg,
                                              double hit_tol,
                                              bool hold_enabled = true,
                                              int steps_limit = -1) {
  if (!(hit_tol > 0.0)) {
    throw NumericalError("integrate_closed_loop: hit_tol must be positive");
  }
  const double eps = effective_epsilon(sc, reg);
  const bool Bvar = sc.B.is_table();
  const Matrix BTconst = sc.B(0.0).transpose();
  auto control = [&, eps](int /*k*/, double t, const Vector& X) -> Vector {
    if (Bvar) {
      return -sc.rho *
             sign_smoothed(sc.B(t).transpose() * (X - sc.y), eps);
    }
    return -sc.rho * sign_smoothed(BTconst * (X - sc.y), eps);
  };
  return detail::em_integrate(sc, path, control, hit_tol, hold_enabled,
                              steps_limit);
}

// Open-loop integration with a supplied control map (t, X) -> u. Hit detection
// stays on; holding is disabled.
inline TrajectoryResult integrate_open_loop(
    const Scenario& sc,
    const std::function<Vector(double, const Vector&)>& controller,
    const BrownianPath& path, double hit_tol = 0.0) {
  const double tol = hit_tol > 0.0 ? hit_tol : sc.hit_tol_or_default();
  auto control = [&](int /*k*/, double t, const Vector& X) -> Vector {
    return controller(t, X);
  };
  return detail::em_integrate(sc, path, control, tol, /*hold_enabled=*/false);
}

// Indexed variant for controllers that are cheaper to evaluate by step index
// (e.g. precomputed deterministic sequences).
inline TrajectoryResult integrate_open_loop_indexed(
    const Scenario& sc,
    const std::function<Vector(int, double, const Vector&)>& controller,
    const BrownianPath& path, double hit_tol = 0.0) {
  const double tol = hit_tol > 0.0 ? hit_tol : sc.hit_tol_or_default();
  return detail::em_integrate(sc, path, controller, tol,
                              /*hold_enabled=*/false);
}

// { e^{-C* t_k} |X_k - y| } over the trajectory grid.
inline Eigen::VectorXd supermartingale_series(const TrajectoryResult& traj,
                                              const Vector& y, double C_star) {
  if (!(C_star > 0.0)) {
    throw NumericalError("supermartingale_series: C_star must be positive");
  }
  const int nodes = static_cast<int>(traj.states.rows());
  Eigen::VectorXd s(nodes);
  for (int k = 0; k < nodes; ++k) {
    const double t = traj.grid.time(k);
    s(k) = std::exp(-C_star * t) * (traj.states.row(k).transpose() - y).norm();
  }
  return s;
}

struct RegularizationTable {
  std::vector<double> eps;
  Matrix distances;  // distances(i, j) = sup_k |X^{eps_i}_k - X^{eps_j}_k|
};

// Integrates the same Brownian path at each smoothing width and reports all
// pairwise sup-norm trajectory distances.
inline RegularizationTable regularization_convergence(
    const Scenario& sc, const BrownianPath& path,
    const std::vector<double>& eps_list, double hit_tol = 0.0) {
  if (eps_list.size() < 2) {
    throw NumericalError("regularization_convergence: need >= 2 widths");
  }
  for (std::size_t i = 1; i < eps_list.size(); ++i) {
    if (!(eps_list[i] < eps_list[i - 1])) {
      throw NumericalError(
          "regularization_convergence: widths must strictly decrease");
    }
  }
  const double tol = hit_tol > 0.0 ? hit_tol : sc.hit_tol_or_default();
  const int ne = static_cast<int>(eps_list.size());
  std::vector<Eigen::MatrixXd> states;
  states.reserve(eps_list.size());
  for (double eps : eps_list) {
    auto traj = integrate_closed_loop(sc, path,
                                      SignRegularization::smoothed(eps), tol);
    if (traj.diverged) {
      throw NumericalError("regularization_convergence: trajectory diverged");
    }
    states.push_back(std::move(traj.states));
  }
  RegularizationTable table;
  table.eps = eps_list;
  table.distances = Matrix::Zero(ne, ne);
  for (int i = 0; i < ne; ++i) {
    for (int j = i + 1; j < ne; ++j) {
      const double dist =
          (states[i] - states[j]).rowwise().norm().maxCoeff();
      table.distances(i, j) = dist;
      table.distances(j, i) = dist;
    }
  }
  return table;
}

}  // namespace relay_steer
