#pragma once

// Exact null steering under the Kalman rank condition with single-channel
// linear noise sigma satisfying sigma^2 = a * sigma and range(sigma) inside
// range(B): hypothesis checks, the minimum-energy deterministic plan through
// the controllability Gramian, the correction series D(t), D1(t) with their
// closed forms, the adapted composite controller, and the companion-form
// builder for scalar n-th order equations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "relay_steer/brownian.hpp"
#include "relay_steer/core_math.hpp"
#include "relay_steer/errors.hpp"
#include "relay_steer/scenario.hpp"
#include "relay_steer/sde_sim.hpp"

namespace relay_steer {

struct KalmanHypothesesReport {
  int rank = 0;
  bool rank_ok = false;
  bool sigma_power_ok = false;
  double a = 0.0;
  bool range_ok = false;
  std::map<std::string, double> residuals;

  bool all_ok() const { return rank_ok && sigma_power_ok && range_ok; }
};

// Fits sigma^2 = a * sigma by least squares and checks the three structural
// hypotheses of the null-steering construction (single noise channel).
inline KalmanHypothesesReport check_hypotheses(const Matrix& A, const Matrix& B,
                                               const Matrix& sigma) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || sigma.rows() != n ||
      sigma.cols() != n) {
    throw NumericalError("check_hypotheses: incompatible shapes");
  }
  KalmanHypothesesReport rep;
  rep.rank = controllability_matrix_rank(A, B).second;
  rep.rank_ok = rep.rank == static_cast<int>(n);

  const double s_norm2 = sigma.squaredNorm();
  if (s_norm2 > 0.0) {
    rep.a = (sigma * sigma).cwiseProduct(sigma).sum() / s_norm2;
  }
  const double power_resid = (sigma * sigma - rep.a * sigma).norm();
  rep.residuals["sigma_power"] = power_resid;
  rep.sigma_power_ok = power_resid <= 1e-10 * (1.0 + s_norm2);

  double range_resid = std::numeric_limits<double>::infinity();
  try {
    const Matrix Bpinv = pseudo_left_inverse(B);
    range_resid =
        ((Matrix::Identity(n, n) - B * Bpinv) * sigma).norm();
  } catch (const NumericalError&) {
    // column-rank-deficient B: range inclusion fails below unless sigma = 0
    range_resid = sigma.norm();
  }
  rep.residuals["range"] = range_resid;
  rep.range_ok = range_resid <= 1e-10 * (1.0 + sigma.norm());
  return rep;
}

struct SteeringPlan {
  TimeGrid grid;
  Matrix A;  // n x n (constant in this branch)
  Matrix B;  // n x m
  Eigen::MatrixXd u_det;  // steps x m, deterministic control at left nodes
  Eigen::MatrixXd y_det;  // (steps+1) x n reference trajectory
  Matrix gramian;
  int truncation_K = 20;
  double terminal_error = 0.0;  // |y_det(T)|
};

// Minimum-energy control steering dy/dt = -A y + B u from x to 0 over the
// grid horizon:  u(s) = -B^T e^{-A^T (T-s)} G_T^{-1} e^{-A T} x  with
// G_T = int_0^T e^{-A s} B B^T e^{-A^T s} ds.  The Gramian and the flow are
// both evaluated through the augmented exponential
// exp(t * [[-A, BB^T], [0, A^T]]), which keeps the terminal identity
// y(T) = e^{-AT} x - G_T G_T^{-1} e^{-AT} x = 0 exact to rounding.
inline SteeringPlan min_energy_control(const Matrix& A, const Matrix& B,
                                       const Vector& x, const TimeGrid& grid) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || x.size() != n) {
    throw NumericalError("min_energy_control: incompatible shapes");
  }
  if (controllability_matrix_rank(A, B).second != static_cast<int>(n)) {
    throw HypothesisError(
        "min_energy_control: Kalman rank condition fails, system not "
        "controllable");
  }
  const Eigen::Index m = B.cols();
  const double T = grid.T;
  const int steps = grid.steps;

  Matrix M = Matrix::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = -A;
  M.topRightCorner(n, n) = B * B.transpose();
  M.bottomRightCorner(n, n) = A.transpose();

  const Matrix EMT = matrix_exp(Matrix(M * T));
  const Matrix e_mAT = EMT.topLeftCorner(n, n);        // e^{-A T}
  const Matrix F12 = EMT.topRightCorner(n, n);
  const Matrix F22 = EMT.bottomRightCorner(n, n);      // e^{A^T T}
  Matrix G = F12 * F22.inverse();                      // the Gramian G_T
  G = 0.5 * (G + G.transpose());

  {
    Eigen::JacobiSVD<Matrix> svd(G);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 0.0 || sv(0) / sv(sv.size() - 1) > 1e14) {
      throw NumericalError(
          "min_energy_control: Gramian is numerically singular");
    }
  }

  const Vector w = solve_spd_refined(G, Vector(e_mAT * x));
  const Vector eta0 = -e_mAT.transpose() * w;

  SteeringPlan plan;
  plan.grid = grid;
  plan.A = A;
  plan.B = B;
  plan.gramian = G;
  plan.u_det.resize(steps, m);
  plan.y_det.resize(steps + 1, n);

  const Matrix Eh = matrix_exp(Matrix(M * grid.dt()));
  Vector z(2 * n);
  z.head(n) = x;
  z.tail(n) = eta0;
  plan.y_det.row(0) = x;
  for (int k = 0; k < steps; ++k) {
    plan.u_det.row(k) = B.transpose() * z.tail(n);
    z = Eh * z;
    plan.y_det.row(k + 1) = z.head(n);
  }
  plan.terminal_error = plan.y_det.row(steps).norm();
  if (plan.terminal_error > 1e-8 * (1.0 + x.norm())) {
    throw NumericalError(
        "min_energy_control: plan terminal error " +
        std::to_string(plan.terminal_error) +
        " exceeds tolerance; the Gramian is too ill-conditioned");
  }
  return plan;
}

// Tail bound for the truncated exponential-type series at truncation K:
//   |b|^{K+1} / (K+1)! * max(1, |a|^{K-1}) * ||sigma||.
inline double d1_tail_bound(double b_val, double a, double sigma_norm, int K) {
  const double ab = std::abs(b_val);
  if (ab == 0.0) return 0.0;
  double logt = (K + 1) * std::log(ab) - std::lgamma(K + 2.0);
  const double aa = std::abs(a);
  if (aa > 1.0) logt += (K - 1) * std::log(aa);
  return std::exp(logt) * sigma_norm;
}

// Smallest K >= K_min with tail bound <= tol.
inline int choose_truncation_K(double b_max, double a, double sigma_norm,
                               double tol, int K_min = 20) {
  for (int K = K_min; K <= 170; ++K) {
    if (d1_tail_bound(b_max, a, sigma_norm, K) <= tol) return K;
  }
  throw NumericalError(
      "choose_truncation_K: no truncation order meets the tolerance");
}

// D1(b) = sum_{k=1}^{K} (1/k!) b^k sigma^{k-1}. With tol > 0, refuses
// truncations whose tail bound exceeds tol.
inline Matrix correction_series_D1(double b_val, const Matrix& sigma, double a,
                                   int K, double tol = 0.0) {
  if (K < 2) throw NumericalError("correction_series_D1: K must be >= 2");
  if (tol > 0.0 && d1_tail_bound(b_val, a, sigma.norm(), K) > tol) {
    throw NumericalError(
        "correction_series_D1: truncation K too small for requested "
        "tolerance");
  }
  const Eigen::Index n = sigma.rows();
  Matrix sum = Matrix::Zero(n, n);
  Matrix power = Matrix::Identity(n, n);  // sigma^{k-1}
  double coeff = 1.0;                     // b^k / k!
  for (int k = 1; k <= K; ++k) {
    coeff *= b_val / k;
    sum += coeff * power;
    if (k < K) power = power * sigma;
  }
  return sum;
}

// Closed form of D1 under sigma^2 = a sigma:
//   b I + f(b) sigma,  f(b) = (e^{ab} - 1 - ab)/a^2  (a != 0),  b^2/2 (a = 0).
inline Matrix correction_series_D1_closed(double b_val, const Matrix& sigma,
                                          double a) {
  const Eigen::Index n = sigma.rows();
  const double f = a != 0.0 ? (std::expm1(a * b_val) - a * b_val) / (a * a)
                            : 0.5 * b_val * b_val;
  return b_val * Matrix::Identity(n, n) + f * sigma;
}

// D(b) = [sum_{k>=1} (-b)^k/k! sigma^{k-1}] * A * [sum_{k>=1} b^k/k! sigma^k],
// truncated at K terms in each factor.
inline Matrix correction_series_D(double b_val, const Matrix& sigma,
                                  const Matrix& A, double a, int K,
                                  double tol = 0.0) {
  const Matrix left = correction_series_D1(-b_val, sigma, a, K, tol);
  const Matrix right = sigma * correction_series_D1(b_val, sigma, a, K, tol);
  return left * A * right;
}

// Closed form of D under sigma^2 = a sigma, with
// g1(b) = (e^{ab} - 1)/a (a != 0), b (a = 0).
inline Matrix correction_series_D_closed(double b_val, const Matrix& sigma,
                                         const Matrix& A, double a) {
  const double g1 = a != 0.0 ? std::expm1(a * b_val) / a : b_val;
  const Matrix left = correction_series_D1_closed(-b_val, sigma, a);
  return left * A * (g1 * sigma);
}

// Conservative tail bound for the truncated D product.
inline double d_tail_bound(double b_val, const Matrix& sigma, const Matrix& A,
                           double a, int K) {
  const double tb = d1_tail_bound(b_val, a, sigma.norm(), K);
  const double left_norm = correction_series_D1_closed(-b_val, sigma, a).norm();
  const double right_norm =
      (sigma * correction_series_D1_closed(b_val, sigma, a)).norm();
  const double An = A.norm();
  return tb * An * (right_norm + sigma.norm() * tb) +
         left_norm * An * sigma.norm() * tb;
}

// Adapted composite control along one Brownian path:
//   u_k = u_det_k + B^+ ( sigma D(b_k) y_det_k + sigma D1(b_k) (B u_det_k) ),
// with b_k = beta(t_k) - t_k / 2. The truncation order is raised until the
// tail bound along the whole path is <= 1e-10. Each corrected term must lie
// in range(B); the residual of the B^+ solve is checked per step.
inline Eigen::MatrixXd composite_control(SteeringPlan& plan,
                                         const Matrix& sigma, double a,
                                         const Matrix& B_pinv,
                                         const BrownianPath& beta_path) {
  if (beta_path.d != 1) {
    throw HypothesisError("composite_control: single noise channel required");
  }
  if (beta_path.grid.steps != plan.grid.steps ||
      std::abs(beta_path.grid.T - plan.grid.T) > 1e-12 * plan.grid.T) {
    throw NumericalError("composite_control: path grid does not match plan");
  }
  const int steps = plan.grid.steps;
  const Eigen::Index n = plan.A.rows();
  const Eigen::Index m = plan.B.cols();
  const Eigen::VectorXd beta = beta_path.cumulative(0);

  double b_max = 0.0;
  for (int k = 0; k < steps; ++k) {
    b_max = std::max(b_max,
                     std::abs(beta(k) - 0.5 * plan.grid.time(k)));
  }
  const int K =
      choose_truncation_K(b_max, a, sigma.norm(), 1e-10, plan.truncation_K);
  plan.truncation_K = K;

  std::vector<Matrix> sig_pow(K + 1);
  sig_pow[0] = Matrix::Identity(n, n);
  for (int k = 1; k <= K; ++k) sig_pow[k] = sig_pow[k - 1] * sigma;

  Eigen::MatrixXd u(steps, m);
  Matrix left(n, n), right(n, n), D1(n, n);
  for (int k = 0; k < steps; ++k) {
    const double b = beta(k) - 0.5 * plan.grid.time(k);
    left.setZero();   // D1(-b) truncation = left factor of D
    right.setZero();  // sigma * D1(b) truncation = right factor of D
    D1.setZero();
    double cpos = 1.0, cneg = 1.0;  // b^j/j! and (-b)^j/j!
    for (int j = 1; j <= K; ++j) {
      cpos *= b / j;
      cneg *= -b / j;
      left += cneg * sig_pow[j - 1];
      right += cpos * sig_pow[j];
      D1 += cpos * sig_pow[j - 1];
    }
    const Vector y_ref = plan.y_det.row(k).transpose();
    const Vector u_ref = plan.u_det.row(k).transpose();
    const Vector Du = left * (plan.A * (right * y_ref));
    const Vector corr = sigma * Du + sigma * (D1 * (plan.B * u_ref));
    const Vector uc = B_pinv * corr;
    if ((plan.B * uc - corr).norm() > 1e-8 * (1.0 + corr.norm())) {
      throw NumericalError(
          "composite_control: correction term leaves range(B) (range "
          "hypothesis violated)");
    }
    u.row(k) = u_ref + uc;
  }
  return u;
}

struct NullSteerResult {
  KalmanHypothesesReport hypotheses;
  SteeringPlan plan;  // truncation_K reflects the order actually used
  int paths = 0;
  std::vector<double> terminal_norms;  // per path, |X(T)|
  double mean_terminal = 0.0;
  double median_terminal = 0.0;
  double max_terminal = 0.0;
  double max_control = 0.0;
};

// End-to-end exact null steering: hypothesis checks (throws HypothesisError
// on failure), minimum-energy plan, then per path the adapted composite
// control integrated through the Euler-Maruyama scheme for
//   dX + A X dt = B u dt + sigma X dbeta.
inline NullSteerResult null_steer_ensemble(const Matrix& A, const Matrix& B,
                                           const Matrix& sigma, const Vector& x,
                                           double T, int steps, int paths,
                                           std::uint64_t seed) {
  if (paths < 1) throw NumericalError("null_steer_ensemble: paths must be >= 1");
  NullSteerResult res;
  res.hypotheses = check_hypotheses(A, B, sigma);
  if (!res.hypotheses.all_ok()) {
    std::string msg = "null steering hypotheses fail:";
    if (!res.hypotheses.rank_ok) {
      msg += " Kalman rank " + std::to_string(res.hypotheses.rank) + " < " +
             std::to_string(A.rows()) + ";";
    }
    if (!res.hypotheses.sigma_power_ok) {
      msg += " sigma^2 != a*sigma (residual " +
             std::to_string(res.hypotheses.residuals.at("sigma_power")) + ");";
    }
    if (!res.hypotheses.range_ok) {
      msg += " range(sigma) not inside range(B) (residual " +
             std::to_string(res.hypotheses.residuals.at("range")) + ");";
    }
    throw HypothesisError(msg);
  }
  const TimeGrid grid(T, steps);
  res.plan = min_energy_control(A, B, x, grid);
  const Matrix B_pinv = pseudo_left_inverse(B);

  Scenario sc;
  sc.n = static_cast<int>(A.rows());
  sc.m = static_cast<int>(B.cols());
  sc.d = 1;
  sc.A = MatrixFunction::constant(A);
  sc.B = MatrixFunction::constant(B);
  sc.sigma = DiffusionSpec::linear({sigma});
  sc.x = x;
  sc.y = Vector::Zero(sc.n);
  sc.T = T;
  sc.rho = 1.0;  // unused: the control is the precomputed composite sequence
  sc.solver.dt = grid.dt();

  res.paths = paths;
  res.terminal_norms.reserve(paths);
  for (int p = 0; p < paths; ++p) {
    const BrownianPath bp = sample_brownian(grid, 1, seed, p);
    const Eigen::MatrixXd u_all =
        composite_control(res.plan, sigma, res.hypotheses.a, B_pinv, bp);
    auto ctrl = [&u_all](int k, double /*t*/, const Vector&) -> Vector {
      return u_all.row(k).transpose();
    };
    const TrajectoryResult traj = integrate_open_loop_indexed(sc, ctrl, bp);
    if (traj.diverged) {
      throw NumericalError("null_steer_ensemble: path " + std::to_string(p) +
                           " diverged");
    }
    res.terminal_norms.push_back(traj.states.row(steps).norm());
    res.max_control = std::max(res.max_control, traj.max_control_norm);
  }
  for (double v : res.terminal_norms) {
    res.mean_terminal += v;
    res.max_terminal = std::max(res.max_terminal, v);
  }
  res.mean_terminal /= paths;
  std::vector<double> sorted = res.terminal_norms;
  std::sort(sorted.begin(), sorted.end());
  res.median_terminal = sorted[sorted.size() / 2];
  return res;
}

// Companion realization of the scalar n-th order equation: A has ones on the
// superdiagonal and (a_1..a_n) in the last row, B = e_n, sigma has
// (b_1..b_n) in the last row.
inline void companion_system(const std::vector<double>& a_coeffs,
                             const std::vector<double>& b_coeffs, Matrix& A,
                             Matrix& B, Matrix& sigma) {
  const int n = static_cast<int>(a_coeffs.size());
  if (n < 1 || b_coeffs.size() != a_coeffs.size()) {
    throw NumericalError(
        "companion_system: need n >= 1 and matching coefficient lists");
  }
  A = Matrix::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) A(i, i + 1) = 1.0;
  for (int j = 0; j < n; ++j) A(n - 1, j) = a_coeffs[j];
  B = Matrix::Zero(n, 1);
  B(n - 1, 0) = 1.0;
  sigma = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) sigma(n - 1, j) = b_coeffs[j];
}

}  // namespace relay_steer
