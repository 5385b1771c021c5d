#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "relay_steer/brownian.hpp"
#include "relay_steer/errors.hpp"
#include "relay_steer/rng.hpp"

using namespace relay_steer;
using Catch::Matchers::WithinAbs;

TEST_CASE("TimeGrid basics and validation") {
  const TimeGrid g(1.0, 10);
  CHECK_THAT(g.dt(), WithinAbs(0.1, 1e-15));
  CHECK_THAT(g.time(0), WithinAbs(0.0, 0.0));
  CHECK_THAT(g.time(3), WithinAbs(0.3, 1e-15));
  CHECK_THAT(g.time(10), WithinAbs(1.0, 0.0));
  CHECK_THROWS_AS(TimeGrid(0.0, 10), NumericalError);
  CHECK_THROWS_AS(TimeGrid(-1.0, 10), NumericalError);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), NumericalError);
}

TEST_CASE("sample_brownian shape, determinism, and normal indexing") {
  const TimeGrid g(2.0, 50);
  const BrownianPath p = sample_brownian(g, 3, 11, 5);
  CHECK(p.increments.rows() == 50);
  CHECK(p.increments.cols() == 3);

  const BrownianPath q = sample_brownian(g, 3, 11, 5);
  CHECK(p.increments == q.increments);

  // Increment (k, j) must be sqrt(dt) times normal number k*d + j.
  NormalStream ns(11, 5);
  const double sd = std::sqrt(g.dt());
  CHECK(p.increments(0, 0) == sd * ns.at(0));
  CHECK(p.increments(0, 2) == sd * ns.at(2));
  CHECK(p.increments(7, 1) == sd * ns.at(7 * 3 + 1));

  const BrownianPath r = sample_brownian(g, 3, 11, 6);
  CHECK(p.increments != r.increments);
}

TEST_CASE("cumulative path starts at zero and telescopes") {
  const TimeGrid g(1.0, 20);
  const BrownianPath p = sample_brownian(g, 2, 3, 0);
  const Eigen::VectorXd beta = p.cumulative(1);
  REQUIRE(beta.size() == 21);
  CHECK(beta(0) == 0.0);
  CHECK_THAT(beta(20), WithinAbs(p.increments.col(1).sum(), 1e-14));
  CHECK_THAT(beta(5) - beta(4), WithinAbs(p.increments(4, 1), 1e-15));
}

TEST_CASE("increment variance matches dt at desk scale") {
  const TimeGrid g(1.0, 20000);
  const BrownianPath p = sample_brownian(g, 1, 99, 0);
  const double mean_sq = p.increments.col(0).squaredNorm() / g.steps;
  CHECK_THAT(mean_sq / g.dt(), WithinAbs(1.0, 0.05));
}

TEST_CASE("coarsen sums blocks of increments on the same noise") {
  const TimeGrid g(1.0, 100);
  const BrownianPath fine = sample_brownian(g, 2, 4, 9);
  const BrownianPath coarse = coarsen(fine, 10);
  CHECK(coarse.grid.steps == 10);
  CHECK_THAT(coarse.grid.T, WithinAbs(1.0, 0.0));
  for (int k = 0; k < 10; ++k) {
    for (int j = 0; j < 2; ++j) {
      double s = 0.0;
      for (int i = 0; i < 10; ++i) s += fine.increments(10 * k + i, j);
      CHECK_THAT(coarse.increments(k, j), WithinAbs(s, 1e-15));
    }
  }
  // Terminal value of the Brownian path is preserved exactly up to rounding.
  CHECK_THAT(coarse.cumulative(0)(10), WithinAbs(fine.cumulative(0)(100), 1e-12));
  CHECK_THROWS_AS(coarsen(fine, 7), NumericalError);
  CHECK_THROWS_AS(coarsen(fine, 0), NumericalError);
}
