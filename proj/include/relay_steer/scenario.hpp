#pragma once

// The Scenario bundles everything that defines one controlled SDE
//   dX + A(t) X dt = B(t) u dt + sigma(X) dW,   X(0) = x,
// together with the relay gain rho, the target y, the horizon T, and solver /
// ensemble options. A and B may be constant or piecewise-linear breakpoint
// tables in t.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "relay_steer/core_math.hpp"
#include "relay_steer/diffusion.hpp"
#include "relay_steer/errors.hpp"

namespace relay_steer {

// Constant matrix or breakpoint table with linear interpolation in t.
class MatrixFunction {
 public:
  MatrixFunction() = default;

  static MatrixFunction constant(Matrix M) {
    MatrixFunction f;
    f.constant_ = std::move(M);
    f.is_table_ = false;
    return f;
  }

  static MatrixFunction table(std::vector<double> times,
                              std::vector<Matrix> values) {
    if (times.size() < 2 || times.size() != values.size()) {
      throw NumericalError("MatrixFunction: table needs >= 2 breakpoints");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) {
        throw NumericalError("MatrixFunction: breakpoints must increase");
      }
      if (values[i].rows() != values[0].rows() ||
          values[i].cols() != values[0].cols()) {
        throw NumericalError("MatrixFunction: inconsistent table shapes");
      }
    }
    MatrixFunction f;
    f.times_ = std::move(times);
    f.values_ = std::move(values);
    f.is_table_ = true;
    return f;
  }

  bool is_table() const { return is_table_; }
  const std::vector<double>& breakpoint_times() const { return times_; }
  const std::vector<Matrix>& breakpoint_values() const { return values_; }
  const Matrix& constant_value() const { return constant_; }

  Eigen::Index rows() const {
    return is_table_ ? values_[0].rows() : constant_.rows();
  }
  Eigen::Index cols() const {
    return is_table_ ? values_[0].cols() : constant_.cols();
  }

  Matrix operator()(double t) const {
    if (!is_table_) return constant_;
    if (t <= times_.front()) return values_.front();
    if (t >= times_.back()) return values_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin());
    const double t0 = times_[i - 1], t1 = times_[i];
    const double w = (t - t0) / (t1 - t0);
    return (1.0 - w) * values_[i - 1] + w * values_[i];
  }

 private:
  bool is_table_ = false;
  Matrix constant_;
  std::vector<double> times_;
  std::vector<Matrix> values_;
};

struct SolverOptions {
  double dt = 0.0;        // 0 = default T / 10^4
  double epsilon = 1e-3;  // sign-smoothing width
  double hit_tol = 0.0;   // 0 = default 1e-4 * (1 + |x - y|)
};

struct EnsembleOptions {
  int paths = 1000;
  std::uint64_t seed = 0;
};

struct Scenario {
  int n = 0, m = 0, d = 0;
  MatrixFunction A;  // n x n
  MatrixFunction B;  // n x m
  DiffusionSpec sigma;
  Vector x;  // initial state
  Vector y;  // target (sigma(y) must vanish)
  double T = 1.0;
  double rho = 1.0;
  SolverOptions solver;
  EnsembleOptions ensemble;

  double dt_or_default() const { return solver.dt > 0.0 ? solver.dt : T / 1e4; }
  double hit_tol_or_default() const {
    return solver.hit_tol > 0.0 ? solver.hit_tol
                                : 1e-4 * (1.0 + (x - y).norm());
  }
  int steps() const {
    const double dt = dt_or_default();
    return std::max(1, static_cast<int>(std::llround(T / dt)));
  }

  // Structural validation. When `closed_loop` is set, also checks the
  // uniform-ellipticity hypothesis gamma_lower_bound(B(t)) > 0 on a sampled
  // grid (required by the relay bound machinery, not by open-loop runs).
  void validate(bool closed_loop = true, int t_samples = 1001) const {
    std::ostringstream err;
    if (n < 1 || m < 1 || d < 1) {
      throw HypothesisError("scenario: n, m, d must be positive");
    }
    if (A.rows() != n || A.cols() != n) {
      throw HypothesisError("scenario: A must be n x n");
    }
    if (B.rows() != n || B.cols() != m) {
      throw HypothesisError("scenario: B must be n x m");
    }
    if (x.size() != n || y.size() != n) {
      throw HypothesisError("scenario: x and y must have length n");
    }
    if (!(T > 0.0) || !(rho >= 0.0)) {
      throw HypothesisError("scenario: need T > 0 and rho >= 0");
    }
    if (sigma.d != d) {
      throw HypothesisError("scenario: sigma channel count != d");
    }
    for (int s = 0; s < t_samples; ++s) {
      const double t = T * s / (t_samples - 1);
      if (!A(t).allFinite() || !B(t).allFinite()) {
        throw HypothesisError("scenario: A(t)/B(t) entries must be finite");
      }
      if (s > 0 && !A.is_table() && !B.is_table()) break;
    }
    const double sig_at_target = sigma.evaluate(y).norm();
    if (!(sig_at_target <= 1e-12)) {
      err << "sigma(y) != 0 (|sigma(y)| = " << sig_at_target
          << "): the diffusion must vanish at the target";
      throw HypothesisError(err.str());
    }
    if (closed_loop) {
      double gmin = std::numeric_limits<double>::infinity();
      const int samples = (A.is_table() || B.is_table()) ? t_samples : 1;
      for (int s = 0; s < samples; ++s) {
        const double t = samples == 1 ? 0.0 : T * s / (samples - 1);
        gmin = std::min(gmin, gamma_lower_bound(B(t)));
      }
      if (!(gmin > 0.0)) {
        throw HypothesisError(
            "gamma_lower_bound(B) = 0: B(t)B(t)^T is not uniformly positive "
            "definite");
      }
    }
  }
};

}  // namespace relay_steer
