#pragma once

// The relay feedback law u = -rho * sign_reg(B^T(t)(X - y)), the post-hit
// holding selection, and the quantitative hitting-probability bound
//   P(tau <= T) >= 1 - (C*/(rho*gamma)) * ((1 - e^{-C*T})^{-1}|x-y| + |y|)
// with C* = sup_t ||A(t)||_2 and gamma = inf_t gamma_lower_bound(B(t)).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

#include "relay_steer/core_math.hpp"
#include "relay_steer/errors.hpp"
#include "relay_steer/scenario.hpp"

namespace relay_steer {

struct BoundConstants {
  double C_star = 0.0;
  double gamma = 0.0;
  double eta = 0.0;  // gamma / C_star
};

// Effective smoothing width of the regularized sign for a given scenario. The
// yosida kind requires square constant B with B B^T = c I and reduces exactly
// to the smoothed sign at epsilon = lambda * rho * c (block soft-thresholding
// of the resolvent).
inline double effective_epsilon(const Scenario& sc,
                                const SignRegularization& reg) {
  if (reg.kind == SignRegularization::Kind::smoothed) {
    if (!(reg.epsilon > 0.0)) {
      throw NumericalError("sign regularization: epsilon must be positive");
    }
    return reg.epsilon;
  }
  if (!(reg.lambda > 0.0)) {
    throw NumericalError("sign regularization: lambda must be positive");
  }
  if (sc.B.is_table() || sc.n != sc.m) {
    throw NumericalError(
        "yosida regularization requires square, time-constant B");
  }
  const Matrix B = sc.B(0.0);
  const Matrix BBt = B * B.transpose();
  const double c = BBt.trace() / sc.n;
  if (!(c > 0.0) ||
      (BBt - c * Matrix::Identity(sc.n, sc.n)).norm() > 1e-10 * c * sc.n) {
    throw NumericalError("yosida regularization requires B B^T = c I, c > 0");
  }
  return reg.lambda * sc.rho * c;
}

inline Vector relay_feedback(double t, const Vector& X, const Scenario& sc,
                             const SignRegularization& reg) {
  const double eps = effective_epsilon(sc, reg);
  const Vector v = sc.B(t).transpose() * (X - sc.y);
  return -sc.rho * sign_smoothed(v, eps);
}

// Holding selection after the hit: solves B(t) u = A(t) y in least-squares
// sense via u = B^T (B B^T)^{-1} A(t) y, so the drift vanishes at X = y.
// Returns nullopt when |u| > rho (holding infeasible at gain rho).
inline std::optional<Vector> hold_control(double t, const Scenario& sc) {
  const Matrix B = sc.B(t);
  const Vector Ay = sc.A(t) * sc.y;
  const Matrix BBt = B * B.transpose();
  Eigen::LDLT<Matrix> ldlt(BBt);
  if (ldlt.info() != Eigen::Success) {
    return std::nullopt;
  }
  const Vector u = B.transpose() * ldlt.solve(Ay);
  // Verify the solve actually cancels the drift (B not full row rank -> the
  // least-squares residual is nonzero and holding is not exact).
  if ((B * u - Ay).norm() > 1e-8 * (1.0 + Ay.norm())) return std::nullopt;
  if (u.norm() > sc.rho * (1.0 + 1e-12)) return std::nullopt;
  return u;
}

inline BoundConstants bound_constants(const Scenario& sc,
                                      int t_samples = 1001) {
  if (t_samples < 2) {
    throw NumericalError("bound_constants: t_samples must be >= 2");
  }
  const bool varies = sc.A.is_table() || sc.B.is_table();
  const int samples = varies ? t_samples : 1;
  double cmax = 0.0;
  double gmin = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    const double t = samples == 1 ? 0.0 : sc.T * s / (samples - 1);
    cmax = std::max(cmax, spectral_norm(sc.A(t)));
    gmin = std::min(gmin, gamma_lower_bound(sc.B(t)));
  }
  if (!(gmin > 0.0)) {
    throw HypothesisError(
        "gamma_lower_bound(B) = 0: B(t)B(t)^T is not uniformly positive "
        "definite");
  }
  BoundConstants c;
  c.C_star = std::max(cmax, 1e-8);  // floor keeps the C* -> 0 limit finite
  c.gamma = gmin;
  c.eta = c.gamma / c.C_star;
  return c;
}

// C* / (1 - e^{-C* T}), evaluated stably (limit 1/T as C* -> 0).
inline double decay_factor(double C_star, double T) {
  return C_star / (-std::expm1(-C_star * T));
}

inline double success_probability_lower_bound(const BoundConstants& c,
                                              const Vector& x, const Vector& y,
                                              double T, double rho) {
  if (!(rho > 0.0)) {
    throw NumericalError("success_probability_lower_bound: rho must be > 0");
  }
  const double bracket =
      decay_factor(c.C_star, T) * (x - y).norm() + c.C_star * y.norm();
  const double bound = 1.0 - bracket / (rho * c.gamma);
  return std::clamp(bound, 0.0, 1.0);
}

// Smallest rho whose bound reaches p_target; floored at 1e-6.
inline double rho_for_confidence(const BoundConstants& c, const Vector& x,
                                 const Vector& y, double T, double p_target) {
  if (!(p_target >= 0.0) || !(p_target < 1.0)) {
    throw NumericalError("rho_for_confidence: p_target must lie in [0, 1)");
  }
  const double bracket =
      decay_factor(c.C_star, T) * (x - y).norm() + c.C_star * y.norm();
  const double rho = bracket / (c.gamma * (1.0 - p_target));
  return std::max(rho, 1e-6);
}

}  // namespace relay_steer
