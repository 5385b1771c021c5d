#pragma once

// Ensemble execution with per-stream RNG keys, hitting-probability estimation
// with Wilson intervals, and verification of the closed-loop bound and the
// supermartingale property. Trajectories run on worker threads; the merge is
// ordered by stream index, so the report is independent of worker count.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "relay_steer/monte_carlo_report.hpp"
#include "relay_steer/sde_sim.hpp"

namespace relay_steer {

struct RunOptions {
  int workers = 1;
  int decimation = 100;  // supermartingale series stored every `decimation` steps
  int tau_buckets = 50;
  bool hold_enabled = true;
  // When > 0, paths are also checked for containment |X_k - y| <= radius on
  // every grid node from the hit onward.
  double containment_radius = 0.0;
  // When > 0, each path is continued past T by this fraction of the horizon
  // under the holding control (or zero control when holding is infeasible),
  // and containment is checked on the extension too.
  double extension_frac = 0.0;
};

namespace detail {

inline std::vector<int> decimated_indices(int steps, int decimation) {
  std::vector<int> idx;
  for (int k = 0; k < steps; k += decimation) idx.push_back(k);
  idx.push_back(steps);
  return idx;
}

// Continues a trajectory past the main horizon with the holding control (zero
// control if infeasible); returns false if the state ever leaves the
// containment ball around y, true otherwise.
inline bool extend_with_hold(const Scenario& sc, const BrownianPath& path,
                             Vector X, int k_begin, int k_end, double radius) {
  const double dt = path.grid.dt();
  const bool Avar = sc.A.is_table();
  const bool Bvar = sc.B.is_table();
  const Matrix Aconst = sc.A(0.0);
  const Matrix Bconst = sc.B(0.0);
  Matrix Atab, Btab;
  bool contained = (X - sc.y).norm() <= radius;
  Vector Xnew(sc.n);
  for (int k = k_begin; k < k_end && contained; ++k) {
    const double t = dt * k;
    if (Avar) Atab = sc.A(t);
    if (Bvar) Btab = sc.B(t);
    const Matrix& At = Avar ? Atab : Aconst;
    const Matrix& Bt = Bvar ? Btab : Bconst;
    Vector u = Vector::Zero(sc.m);
    if (auto uh = hold_control(t, sc)) u = *uh;
    Xnew = X;
    Xnew.noalias() -= dt * (At * X);
    Xnew.noalias() += dt * (Bt * u);
    sc.sigma.accumulate(X, path.increments.row(k), Xnew);
    X = Xnew;
    if (!X.allFinite() || (X - sc.y).norm() > radius) contained = false;
  }
  return contained;
}

}  // namespace detail

inline EnsembleReport run_ensemble(const Scenario& sc, int paths,
                                   std::uint64_t seed,
                                   const SignRegularization& reg,
                                   double hit_tol = 0.0,
                                   const RunOptions& opts = {}) {
  if (paths < 1) throw NumericalError("run_ensemble: paths must be >= 1");
  sc.validate(/*closed_loop=*/true);
  const double tol = hit_tol > 0.0 ? hit_tol : sc.hit_tol_or_default();
  const BoundConstants consts = bound_constants(sc);
  const int steps = sc.steps();
  const double dt = sc.T / steps;
  const int steps_ext =
      opts.extension_frac > 0.0
          ? std::max(1, static_cast<int>(std::llround(opts.extension_frac * steps)))
          : 0;
  const TimeGrid full_grid(dt * (steps + steps_ext), steps + steps_ext);
  const std::vector<int> dec = detail::decimated_indices(steps, opts.decimation);

  std::vector<PathRecord> records(paths);
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::string failure_msg;
  std::mutex failure_mutex;

  auto worker = [&]() {
    while (true) {
      const int s = next.fetch_add(1);
      if (s >= paths || failed.load()) break;
      try {
        const BrownianPath path = sample_brownian(full_grid, sc.d, seed,
                                                  static_cast<std::uint64_t>(s));
        TrajectoryResult traj =
            integrate_closed_loop(sc, path, reg, tol, opts.hold_enabled, steps);
        PathRecord rec;
        rec.stream = static_cast<std::uint64_t>(s);
        rec.hit = traj.hit;
        rec.diverged = traj.diverged;
        rec.held = traj.held;
        rec.hold_infeasible = traj.hold_infeasible;
        rec.tau = traj.hit ? *traj.tau_hat
                           : std::numeric_limits<double>::quiet_NaN();
        rec.terminal_norm = (traj.states.row(steps).transpose() - sc.y).norm();
        rec.max_control_norm = traj.max_control_norm;
        rec.super.resize(dec.size());
        for (std::size_t i = 0; i < dec.size(); ++i) {
          const int k = dec[i];
          rec.super(static_cast<Eigen::Index>(i)) =
              std::exp(-consts.C_star * dt * k) *
              (traj.states.row(k).transpose() - sc.y).norm();
        }
        if (opts.containment_radius > 0.0) {
          rec.contained = traj.hit && !traj.diverged;
          if (rec.contained) {
            for (int k = traj.tau_index; k <= steps; ++k) {
              if ((traj.states.row(k).transpose() - sc.y).norm() >
                  opts.containment_radius) {
                rec.contained = false;
                break;
              }
            }
          }
          if (steps_ext > 0) {
            rec.contained_ext =
                rec.contained &&
                detail::extend_with_hold(sc, path,
                                         traj.states.row(steps).transpose(),
                                         steps, steps + steps_ext,
                                         opts.containment_radius);
          }
        }
        records[static_cast<std::size_t>(s)] = std::move(rec);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failed.store(true);
        failure_msg = e.what();
      }
    }
  };

  const int nworkers = std::max(1, opts.workers);
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    for (int i = 0; i < nworkers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failed.load()) {
    throw NumericalError("run_ensemble: worker failed: " + failure_msg);
  }

  // Deterministic merge in stream order.
  EnsembleReport rep;
  rep.T = sc.T;
  rep.rho = sc.rho;
  rep.consts = consts;
  rep.tau_histogram.assign(opts.tau_buckets, 0);
  rep.mean_supermartingale.times.resize(dec.size());
  for (std::size_t i = 0; i < dec.size(); ++i) {
    rep.mean_supermartingale.times[i] = dt * dec[i];
  }
  std::vector<double> sum(dec.size(), 0.0), sumsq(dec.size(), 0.0);
  int included = 0;
  for (const PathRecord& rec : records) {
    if (rec.diverged) {
      ++rep.excluded_divergent;
      continue;
    }
    ++included;
    if (rec.hold_infeasible) ++rep.hold_infeasible_count;
    if (rec.hit) {
      ++rep.hits;
      const int b = std::min(
          static_cast<int>(rec.tau / sc.T * opts.tau_buckets),
          opts.tau_buckets - 1);
      ++rep.tau_histogram[b];
      if (rec.contained) ++rep.contained_count;
      if (rec.contained_ext) ++rep.contained_ext_count;
    }
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const double v = rec.super(static_cast<Eigen::Index>(i));
      sum[i] += v;
      sumsq[i] += v * v;
    }
  }
  rep.paths_run = included;
  if (rep.excluded_divergent > 0.001 * paths) {
    throw NumericalError(
        "run_ensemble: " + std::to_string(rep.excluded_divergent) + " of " +
        std::to_string(paths) +
        " paths diverged (> 0.1%); the step size is too coarse for this "
        "scenario");
  }
  rep.p_hat = included > 0 ? static_cast<double>(rep.hits) / included : 0.0;
  const auto ci = wilson_interval(rep.hits, included);
  rep.wilson_lo = ci.first;
  rep.wilson_hi = ci.second;
  rep.mean_supermartingale.mean.resize(dec.size());
  rep.mean_supermartingale.se.resize(dec.size());
  for (std::size_t i = 0; i < dec.size(); ++i) {
    const double mean = included > 0 ? sum[i] / included : 0.0;
    const double var =
        included > 0 ? std::max(0.0, sumsq[i] / included - mean * mean) : 0.0;
    rep.mean_supermartingale.mean[i] = mean;
    rep.mean_supermartingale.se[i] =
        included > 0 ? std::sqrt(var / included) : 0.0;
  }
  rep.bound_rhs =
      success_probability_lower_bound(consts, sc.x, sc.y, sc.T, sc.rho);
  rep.verdict = verify_bound(rep, rep.bound_rhs);
  rep.containment_enabled = opts.containment_radius > 0.0;
  rep.extension_enabled = steps_ext > 0;
  rep.records = std::move(records);
  return rep;
}

}  // namespace relay_steer
