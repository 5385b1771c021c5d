#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "relay_steer/errors.hpp"
#include "relay_steer/monte_carlo.hpp"
#include "relay_steer/monte_carlo_report.hpp"
#include "relay_steer/scenario.hpp"

using namespace relay_steer;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Shrunken variant of the reference ensemble: 2-D, A = B = I, linear diffusion
// vanishing at the origin, gain chosen so the success bound equals 0.9. The
// smoothing width must keep rho*dt/eps below 2 or the in-band map expands and
// paths chatter across the hit ball instead of settling into it.
Scenario small_reference(double dt = 1e-3, double eps = 2e-2) {
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
  sc.solver.dt = dt;
  sc.solver.epsilon = eps;
  sc.solver.hit_tol = 2e-4;
  return sc;
}

}  // namespace

TEST_CASE("Wilson interval reference values") {
  auto ci = wilson_interval(845, 1000);
  CHECK_THAT(ci.first, WithinRel(0.821253161260159, 1e-12));
  CHECK_THAT(ci.second, WithinRel(0.866106375384808, 1e-12));

  ci = wilson_interval(9, 10);
  CHECK_THAT(ci.first, WithinRel(0.5958499732047614, 1e-12));
  CHECK_THAT(ci.second, WithinRel(0.982123786904927, 1e-12));

  ci = wilson_interval(200, 200);
  CHECK_THAT(ci.first, WithinRel(0.9811546736227335, 1e-12));
  CHECK(ci.second == 1.0);

  ci = wilson_interval(0, 50);
  CHECK(ci.first == 0.0);

  ci = wilson_interval(0, 0);  // degenerate: no information
  CHECK(ci.first == 0.0);
  CHECK(ci.second == 1.0);
}

TEST_CASE("bound verdicts") {
  auto make = [](int hits, int n) {
    EnsembleReport rep;
    rep.hits = hits;
    rep.paths_run = n;
    rep.p_hat = static_cast<double>(hits) / n;
    const auto ci = wilson_interval(hits, n);
    rep.wilson_lo = ci.first;
    rep.wilson_hi = ci.second;
    return rep;
  };
  // Estimate above the bound but with the lower confidence limit more than
  // 0.01 below it: not enough evidence either way.
  CHECK(verify_bound(make(845, 1000), 0.84) == Verdict::inconclusive);
  // Clear pass: the whole interval sits above the bound.
  CHECK(verify_bound(make(995, 1000), 0.84) == Verdict::bound_satisfied);
  // Clear fail: even the upper confidence limit is below the bound.
  CHECK(verify_bound(make(700, 1000), 0.84) == Verdict::bound_violated);
}

TEST_CASE("supermartingale check flags only significant increases") {
  EnsembleReport rep;
  rep.mean_supermartingale.times = {0.0, 0.5, 1.0};
  rep.mean_supermartingale.mean = {1.0, 0.6, 0.3};
  rep.mean_supermartingale.se = {0.0, 0.01, 0.01};
  CHECK(supermartingale_check(rep).empty());

  // A small rise within 3 combined standard errors is tolerated.
  rep.mean_supermartingale.mean = {1.0, 0.6, 0.62};
  CHECK(supermartingale_check(rep).empty());

  // A large rise is reported with the offending pair.
  rep.mean_supermartingale.mean = {1.0, 0.6, 0.7};
  const auto viol = supermartingale_check(rep);
  REQUIRE(viol.size() == 1);
  CHECK(viol[0].k_from == 1);
  CHECK(viol[0].k_to == 2);
  CHECK_THAT(viol[0].allowance, WithinRel(0.06, 1e-12));
}

TEST_CASE("ensemble run on the shrunken reference scenario") {
  const Scenario sc = small_reference();
  RunOptions opts;
  opts.containment_radius = 0.1;
  opts.extension_frac = 0.2;
  const EnsembleReport rep =
      run_ensemble(sc, 200, 42, SignRegularization::smoothed(sc.solver.epsilon),
                   sc.solver.hit_tol, opts);

  CHECK(rep.paths_run == 200);
  CHECK(rep.excluded_divergent == 0);
  CHECK(rep.hits == 200);  // the gain is far above what 2-D needs
  CHECK(rep.p_hat == 1.0);
  CHECK_THAT(rep.bound_rhs, WithinRel(0.9, 1e-12));
  CHECK(rep.verdict == Verdict::bound_satisfied);
  CHECK_THAT(rep.wilson_lo, WithinRel(0.9811546736227335, 1e-12));

  // Histogram mass equals the hit count.
  CHECK(std::accumulate(rep.tau_histogram.begin(), rep.tau_histogram.end(), 0) ==
        rep.hits);
  CHECK(static_cast<int>(rep.tau_histogram.size()) == opts.tau_buckets);

  // Records come back in stream order with a held, pinned tail.
  REQUIRE(rep.records.size() == 200);
  for (int i = 0; i < 200; ++i) {
    CHECK(rep.records[i].stream == static_cast<std::uint64_t>(i));
  }
  CHECK(rep.records[0].held);
  CHECK(rep.records[0].terminal_norm == 0.0);

  // Decimated node count: 1000 steps at stride 100, plus the terminal node.
  CHECK(rep.mean_supermartingale.times.size() == 11);
  CHECK(rep.mean_supermartingale.times.front() == 0.0);
  CHECK_THAT(rep.mean_supermartingale.times.back(), WithinRel(1.0, 1e-12));
  CHECK_THAT(rep.mean_supermartingale.mean.front(), WithinRel(1.0, 1e-12));
  CHECK(supermartingale_check(rep).empty());

  // Holding pins the state at the target, so containment holds on the main
  // horizon and on the 20% extension (the diffusion vanishes at y).
  CHECK(rep.containment_enabled);
  CHECK(rep.extension_enabled);
  CHECK(rep.contained_count == rep.hits);
  CHECK(rep.contained_ext_count == rep.hits);
}

TEST_CASE("report does not depend on the worker count") {
  const Scenario sc = small_reference(5e-3, 8e-2);
  RunOptions one, four;
  one.workers = 1;
  four.workers = 4;
  const auto r1 = run_ensemble(
      sc, 64, 7, SignRegularization::smoothed(sc.solver.epsilon), 0.0, one);
  const auto r4 = run_ensemble(
      sc, 64, 7, SignRegularization::smoothed(sc.solver.epsilon), 0.0, four);
  CHECK(r1.hits == r4.hits);
  CHECK(r1.p_hat == r4.p_hat);
  CHECK(r1.wilson_lo == r4.wilson_lo);
  CHECK(r1.tau_histogram == r4.tau_histogram);
  CHECK(r1.mean_supermartingale.mean == r4.mean_supermartingale.mean);
  CHECK(r1.mean_supermartingale.se == r4.mean_supermartingale.se);
  REQUIRE(r1.records.size() == r4.records.size());
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    CHECK(r1.records[i].stream == r4.records[i].stream);
    CHECK(r1.records[i].super == r4.records[i].super);
    const bool both_nan = std::isnan(r1.records[i].tau) &&
                          std::isnan(r4.records[i].tau);
    CHECK((both_nan || r1.records[i].tau == r4.records[i].tau));
  }
}

TEST_CASE("widespread divergence aborts the ensemble") {
  Scenario sc = small_reference(1e-2);
  sc.A = MatrixFunction::constant(-40.0 * Matrix::Identity(2, 2));
  sc.rho = 0.1;  // far too weak against dX = +40 X dt
  CHECK_THROWS_AS(
      run_ensemble(sc, 8, 1, SignRegularization::smoothed(1e-3)),
      NumericalError);
}

TEST_CASE("ensemble input validation") {
  const Scenario sc = small_reference();
  CHECK_THROWS_AS(run_ensemble(sc, 0, 1, SignRegularization::smoothed(1e-3)),
                  NumericalError);
  Scenario bad = sc;
  bad.y = Vector::Ones(2);  // diffusion no longer vanishes at the target
  CHECK_THROWS_AS(run_ensemble(bad, 4, 1, SignRegularization::smoothed(1e-3)),
                  HypothesisError);
}
