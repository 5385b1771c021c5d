#pragma once

// Uniform time grids and sampled Brownian paths. A path is reproducible
// bit-exactly from (seed, stream, grid, d): increment (k, j) consumes the
// normal with global index k*d + j of the (seed, stream) sequence.

#include <Eigen/Dense>

#include <cstdint>

#include "relay_steer/errors.hpp"
#include "relay_steer/rng.hpp"

namespace relay_steer {

struct TimeGrid {
  double T = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double T_, int steps_) : T(T_), steps(steps_) {
    if (!(T > 0.0) || steps < 1) {
      throw NumericalError("TimeGrid: need T > 0 and steps >= 1");
    }
  }
  double dt() const { return T / steps; }
  double time(int k) const { return T * k / steps; }
};

struct BrownianPath {
  TimeGrid grid;
  int d = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  Eigen::MatrixXd increments;  // steps x d, entries ~ N(0, dt)

  // Cumulative value beta_j(t_k) = sum of the first k increments of column j.
  Eigen::VectorXd cumulative(int j) const {
    Eigen::VectorXd beta(grid.steps + 1);
    beta(0) = 0.0;
    for (int k = 0; k < grid.steps; ++k) beta(k + 1) = beta(k) + increments(k, j);
    return beta;
  }
};

inline BrownianPath sample_brownian(const TimeGrid& grid, int d,
                                    std::uint64_t seed, std::uint64_t stream) {
  if (d < 1) throw NumericalError("sample_brownian: d must be >= 1");
  BrownianPath path;
  path.grid = grid;
  path.d = d;
  path.seed = seed;
  path.stream = stream;
  path.increments.resize(grid.steps, d);
  const double sd = std::sqrt(grid.dt());
  NormalStream ns(seed, stream);
  std::uint64_t g = 0;
  for (int k = 0; k < grid.steps; ++k) {
    for (int j = 0; j < d; ++j) {
      path.increments(k, j) = sd * ns.at(g++);
    }
  }
  return path;
}

// The same underlying noise on a coarser grid: sums blocks of `factor`
// increments. Used for strong-convergence comparisons on a common path.
inline BrownianPath coarsen(const BrownianPath& fine, int factor) {
  if (factor < 1 || fine.grid.steps % factor != 0) {
    throw NumericalError("coarsen: factor must divide the step count");
  }
  BrownianPath out;
  out.grid = TimeGrid(fine.grid.T, fine.grid.steps / factor);
  out.d = fine.d;
  out.seed = fine.seed;
  out.stream = fine.stream;
  out.increments.resize(out.grid.steps, out.d);
  for (int k = 0; k < out.grid.steps; ++k) {
    for (int j = 0; j < out.d; ++j) {
      double s = 0.0;
      for (int i = 0; i < factor; ++i) s += fine.increments(k * factor + i, j);
      out.increments(k, j) = s;
    }
  }
  return out;
}

}  // namespace relay_steer
