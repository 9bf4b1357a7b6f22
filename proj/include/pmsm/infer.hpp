#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "pmsm/estimate.hpp"
#include "pmsm/panel.hpp"

namespace pmsm {

// How Var[a - b] is formed for the pair test.
//   PairedInfluence: (1/n^2) sum_i (phi_a,i - phi_b,i)^2. Exact for two
//     estimators computed on the same subjects; saturated contrasts and the
//     hazard-model comparisons use this.
//   SeparateFits: Var[a] + Var[b], each fit's own sandwich variance with the
//     cross-fit covariance dropped. Main-effect WLS comparisons use this
//     convention: each weighted fit reports only its own variance, and
//     dropping the positive coupling between fits on shared data over-states
//     the variance of the difference, so the ascending selection stops early
//     rather than late.
enum class PairVariance { PairedInfluence, SeparateFits };

// Wald-type agreement test between two estimators of the same contrast:
// d = (a - b)^2 / Var[a - b], compared against the upper-alpha chi-squared
// quantile with one degree of freedom. Rejection is strict (d > critical).
struct PairTest {
  int m = 0;
  WeightKind a_kind = WeightKind::SW, b_kind = WeightKind::SW;
  PairVariance rule = PairVariance::PairedInfluence;
  double difference = 0;
  double variance = 0;
  double d = 0;
  double p_value = 1;
  double alpha = 0.05;
  double critical = 0;
  bool rejected = false;
};

// Var[a - b] from paired per-subject influence values: sum((phi_a -
// phi_b)^2) / n^2. Accounts for the dependence between estimators computed
// on the same sample.
double variance_of_difference(const Eigen::VectorXd& influence_a,
                              const Eigen::VectorXd& influence_b);

PairTest pair_test(const EstimateResult& a, const EstimateResult& b, double alpha,
                   PairVariance rule = PairVariance::PairedInfluence);

struct ConfidenceInterval {
  double lo = 0, hi = 0;
  double level = 0.95;
};

// Normal-approximation interval, estimate +/- z_{(1+level)/2} * sqrt(var).
ConfidenceInterval confidence_interval(double estimate, double variance, double level = 0.95);

// Chi-squared(1) upper tail probability and upper quantile.
double chisq1_upper_tail(double d);
double chisq1_quantile_upper(double alpha);

// Nonparametric alternative to the influence-based variance: resample
// subjects with replacement, re-run both estimators via `paired_estimates`
// (which returns the two point estimates on the resampled panel), and take
// the sample variance of the difference. The resampled subject indices are
// passed alongside the panel so per-subject side inputs (supplied
// probability matrices, say) can be re-subset to match. Replicates where
// estimation fails are skipped; more than half failing is an error.
double bootstrap_variance_of_difference(
    const LongPanel& panel, int n_boot, std::uint64_t seed,
    const std::function<std::pair<double, double>(const LongPanel&, const std::vector<int>&)>&
        paired_estimates);

}  // namespace pmsm
