#pragma once

// Ensemble report types and the statistics on top of them: Wilson score
// intervals, bound verdicts, and the decimated supermartingale check.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "relay_steer/errors.hpp"
#include "relay_steer/relay_control.hpp"

namespace relay_steer {

struct PathRecord {
  std::uint64_t stream = 0;
  bool hit = false;
  bool diverged = false;
  bool held = false;
  bool hold_infeasible = false;
  bool contained = false;      // within the containment ball on [tau, T]
  bool contained_ext = false;  // and on the extended horizon
  double tau = std::numeric_limits<double>::quiet_NaN();
  double terminal_norm = 0.0;
  double max_control_norm = 0.0;
  Eigen::VectorXd super;  // supermartingale values at the decimated nodes
};

struct MeanSeries {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> se;
};

enum class Verdict { bound_satisfied, bound_violated, inconclusive };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::bound_satisfied:
      return "bound_satisfied";
    case Verdict::bound_violated:
      return "bound_violated";
    case Verdict::inconclusive:
      return "inconclusive";
  }
  return "inconclusive";
}

struct EnsembleReport {
  int paths_run = 0;
  int hits = 0;
  double p_hat = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 1.0;
  double bound_rhs = 0.0;
  Verdict verdict = Verdict::inconclusive;
  std::vector<int> tau_histogram;
  double T = 1.0;
  double rho = 0.0;
  BoundConstants consts;
  MeanSeries mean_supermartingale;
  int excluded_divergent = 0;
  int hold_infeasible_count = 0;
  bool containment_enabled = false;
  bool extension_enabled = false;
  int contained_count = 0;
  int contained_ext_count = 0;
  std::vector<PathRecord> records;
};

// 95% Wilson score interval for a Bernoulli proportion.
inline std::pair<double, double> wilson_interval(int successes, int trials) {
  if (trials <= 0) return {0.0, 1.0};
  constexpr double z = 1.9599639845400545;  // 97.5% normal quantile
  const double n = trials;
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half =
      z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  // At the degenerate proportions the exact endpoints are 0 and 1; snap them
  // so rounding cannot push the interval off the point estimate.
  const double lo = successes <= 0 ? 0.0 : std::max(0.0, center - half);
  const double hi = successes >= trials ? 1.0 : std::min(1.0, center + half);
  return {lo, hi};
}

// bound_satisfied when the Wilson lower bound clears bound - 0.01 and the
// upper bound clears the bound itself; bound_violated when even the upper
// bound is below; inconclusive otherwise.
inline Verdict verify_bound(const EnsembleReport& rep, double bound) {
  if (rep.wilson_lo >= bound - 0.01 && rep.wilson_hi >= bound) {
    return Verdict::bound_satisfied;
  }
  if (rep.wilson_hi < bound) return Verdict::bound_violated;
  return Verdict::inconclusive;
}

struct SupermartingaleViolation {
  int k_from = 0;
  int k_to = 0;
  double mean_from = 0.0;
  double mean_to = 0.0;
  double allowance = 0.0;
};

// For every decimated pair k < k', the ensemble mean must not increase by
// more than 3 combined standard errors.
inline std::vector<SupermartingaleViolation> supermartingale_check(
    const EnsembleReport& rep) {
  std::vector<SupermartingaleViolation> out;
  const auto& s = rep.mean_supermartingale;
  const int n = static_cast<int>(s.mean.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double allowance = 3.0 * (s.se[i] + s.se[j]);
      if (s.mean[j] > s.mean[i] + allowance) {
        out.push_back({i, j, s.mean[i], s.mean[j], allowance});
      }
    }
  }
  return out;
}

}  // namespace relay_steer
