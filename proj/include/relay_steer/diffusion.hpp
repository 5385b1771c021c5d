#pragma once

// Diffusion coefficients sigma : R^n -> R^{n x d}. Column j multiplies the
// increment of the j-th Brownian channel. The model requires sigma(y) = 0 at
// the steering target, which is validated at scenario construction.

#include <Eigen/Dense>

#include <functional>
#include <utility>
#include <vector>

#include "relay_steer/core_math.hpp"
#include "relay_steer/errors.hpp"

namespace relay_steer {

struct DiffusionSpec {
  enum class Kind {
    zero,         // sigma == 0
    linear,       // column j = S_j * X
    affine_zero,  // column j = S_j * (X - y_star)
    custom        // user callable
  };

  Kind kind = Kind::zero;
  std::vector<Matrix> mats;  // S_1..S_d (linear / affine_zero)
  Vector y_star;             // shift for affine_zero
  std::function<Matrix(const Vector&)> fn;  // custom: X -> n x d
  double lipschitz = 1.0;
  int d = 0;

  static DiffusionSpec zero(int d_) {
    DiffusionSpec s;
    s.kind = Kind::zero;
    s.d = d_;
    return s;
  }
  static DiffusionSpec linear(std::vector<Matrix> S) {
    DiffusionSpec s;
    s.kind = Kind::linear;
    s.d = static_cast<int>(S.size());
    s.mats = std::move(S);
    return s;
  }
  static DiffusionSpec affine_zero(std::vector<Matrix> S, Vector y0) {
    DiffusionSpec s;
    s.kind = Kind::affine_zero;
    s.d = static_cast<int>(S.size());
    s.mats = std::move(S);
    s.y_star = std::move(y0);
    return s;
  }
  static DiffusionSpec custom(std::function<Matrix(const Vector&)> f, int d_,
                              double L) {
    DiffusionSpec s;
    s.kind = Kind::custom;
    s.fn = std::move(f);
    s.d = d_;
    s.lipschitz = L;
    return s;
  }

  // sigma(X) as an n x d matrix.
  Matrix evaluate(const Vector& X) const {
    const Eigen::Index n = X.size();
    switch (kind) {
      case Kind::zero:
        return Matrix::Zero(n, d);
      case Kind::linear: {
        Matrix out(n, d);
        for (int j = 0; j < d; ++j) out.col(j) = mats[j] * X;
        return out;
      }
      case Kind::affine_zero: {
        Matrix out(n, d);
        for (int j = 0; j < d; ++j) out.col(j) = mats[j] * (X - y_star);
        return out;
      }
      case Kind::custom:
        return fn(X);
    }
    throw NumericalError("DiffusionSpec: invalid kind");
  }

  // In-place accumulation X += sigma(X_old) * dW without temporaries on the
  // common linear/affine paths (the simulator hot loop).
  void accumulate(const Vector& X_old, const Eigen::RowVectorXd& dW,
                  Vector& X_new) const {
    switch (kind) {
      case Kind::zero:
        return;
      case Kind::linear:
        for (int j = 0; j < d; ++j) X_new.noalias() += dW(j) * (mats[j] * X_old);
        return;
      case Kind::affine_zero:
        for (int j = 0; j < d; ++j) {
          X_new.noalias() += dW(j) * (mats[j] * (X_old - y_star));
        }
        return;
      case Kind::custom: {
        const Matrix s = fn(X_old);
        X_new.noalias() += s * dW.transpose();
        return;
      }
    }
  }
};

}  // namespace relay_steer
