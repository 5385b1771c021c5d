#pragma once

// Small dense linear-algebra kernels used across the toolkit: the smoothed
// relay nonlinearity, controllability objects (Kalman matrix, Gramian,
// pseudo-inverse), matrix exponentials and norm helpers.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <utility>

#include "relay_steer/errors.hpp"

namespace relay_steer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Regularization of the set-valued vector sign used by the relay feedback.
//   smoothed: v -> v / max(|v|, epsilon)
//   yosida:   resolvent regularization of the relay term with parameter
//             lambda; supported only for square constant B with B*B^T = c*I,
//             where it reduces exactly to the smoothed form with
//             epsilon_eff = lambda * rho * c.
struct SignRegularization {
  enum class Kind { smoothed, yosida };
  Kind kind = Kind::smoothed;
  double epsilon = 1e-3;  // smoothing width (smoothed kind)
  double lambda = 0.0;    // resolvent parameter (yosida kind)

  static SignRegularization smoothed(double eps) {
    SignRegularization r;
    r.kind = Kind::smoothed;
    r.epsilon = eps;
    return r;
  }
  static SignRegularization yosida(double lam) {
    SignRegularization r;
    r.kind = Kind::yosida;
    r.lambda = lam;
    return r;
  }
};

// v / max(|v|, epsilon): equals the unit vector v/|v| whenever |v| >= epsilon,
// linear inside the band, and 0 at v = 0.
inline Vector sign_smoothed(const Vector& v, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw NumericalError("sign_smoothed: epsilon must be positive");
  }
  const double nv = v.norm();
  return v / std::max(nv, epsilon);
}

// Largest singular value (operator 2-norm).
inline double spectral_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  return M.jacobiSvd().singularValues()(0);
}

// sqrt(lambda_min(B B^T)) over the state space: the uniform-ellipticity
// constant of the control operator. Zero when B has fewer columns than rows.
inline double gamma_lower_bound(const Matrix& B) {
  if (B.cols() < B.rows()) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(B);
  const auto& sv = svd.singularValues();
  return sv(sv.size() - 1);
}

// Matrix exponential (scaling-and-squaring with Pade core).
inline Matrix matrix_exp(const Matrix& M) {
  if (M.rows() != M.cols()) {
    throw NumericalError("matrix_exp: matrix must be square");
  }
  return M.exp();
}

// Kalman controllability matrix [B, AB, ..., A^{n-1}B] and its numerical rank
// (singular values below 1e-10 * sigma_max count as zero).
inline std::pair<Matrix, int> controllability_matrix_rank(const Matrix& A,
                                                          const Matrix& B) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n) {
    throw NumericalError("controllability_matrix_rank: incompatible shapes");
  }
  const Eigen::Index m = B.cols();
  Matrix K(n, n * m);
  Matrix block = B;
  for (Eigen::Index i = 0; i < n; ++i) {
    K.middleCols(i * m, m) = block;
    block = A * block;
  }
  Eigen::JacobiSVD<Matrix> svd(K);
  const auto& sv = svd.singularValues();
  int rank = 0;
  if (sv.size() > 0 && sv(0) > 0.0) {
    const double tol = 1e-10 * sv(0);
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sv(i) > tol) ++rank;
    }
  }
  return {K, rank};
}

// G_T = int_0^T exp(-A s) B B^T exp(-A^T s) ds by composite Simpson quadrature
// with `steps` panels (must be even). Symmetric positive semidefinite;
// positive definite exactly when the Kalman rank condition holds.
inline Matrix controllability_gramian(const Matrix& A, const Matrix& B,
                                      double T, int steps = 1000) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n) {
    throw NumericalError("controllability_gramian: incompatible shapes");
  }
  if (!(T > 0.0)) {
    throw NumericalError("controllability_gramian: T must be positive");
  }
  if (steps < 2 || steps % 2 != 0) {
    throw NumericalError(
        "controllability_gramian: panel count must be even and >= 2");
  }
  const double h = T / steps;
  const Matrix BBt = B * B.transpose();
  const Matrix Eh = matrix_exp(Matrix(-A * h));
  Matrix E = Matrix::Identity(n, n);  // exp(-A s) advanced node by node
  Matrix G = Matrix::Zero(n, n);
  for (int k = 0; k <= steps; ++k) {
    double w;  // Simpson weights 1,4,2,4,...,2,4,1
    if (k == 0 || k == steps) {
      w = 1.0;
    } else {
      w = (k % 2 == 1) ? 4.0 : 2.0;
    }
    G.noalias() += w * (E * BBt * E.transpose());
    if (k < steps) E = E * Eh;
  }
  G *= h / 3.0;
  return 0.5 * (G + G.transpose());
}

// Left pseudo-inverse B^+ = (B^T B)^{-1} B^T with B^+ B = I_m; requires full
// column rank.
inline Matrix pseudo_left_inverse(const Matrix& B) {
  const Eigen::Index m = B.cols();
  Eigen::JacobiSVD<Matrix> svd(B);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-10 * sv(0) || B.rows() < m) {
    throw NumericalError("pseudo_left_inverse: B has deficient column rank");
  }
  Matrix BtB = B.transpose() * B;
  return BtB.ldlt().solve(Matrix(B.transpose()));
}

// Solve M x = b for symmetric positive definite M with one step of iterative
// refinement (keeps the residual at rounding level even at condition ~1e10).
inline Vector solve_spd_refined(const Matrix& M, const Vector& b) {
  auto ldlt = M.ldlt();
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError("solve_spd_refined: factorization failed");
  }
  Vector x = ldlt.solve(b);
  Vector r = b - M * x;
  x += ldlt.solve(r);
  return x;
}

}  // namespace relay_steer
