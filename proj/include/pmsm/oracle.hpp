#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "pmsm/dgp.hpp"
#include "pmsm/estimate.hpp"
#include "pmsm/ipw.hpp"

namespace pmsm {

// Population limits of the window-m estimators under an exactly enumerable
// process, computed by direct summation over the joint law (true weights,
// Hajek ratios). theta_K and theta_m come from forced-treatment enumeration
// (the g-formula) instead of weighting, so the two routes are independent.
struct ExactLimits {
  int m = 0;
  double theta_K = 0;   // all K periods forced
  double theta_m = 0;   // window forced, earlier treatment left natural
  double theta_sw = 0, theta_rsw = 0, theta_psw = 0;
  // q(j-1) for lags j = m+1..K: the observational association between the
  // pre-window treatment A(K-j) and following the all-1 vs all-0 window
  // regime. Entries for j <= m are NaN (not defined).
  Eigen::VectorXd q;
};

ExactLimits exact_limits(const EnumerableDgp& dgp, int m);

// Exact marginal-structural-model coefficients by linear recursion through
// the covariate process: E[Y^a] = intercept + sum_j psi(j-1) a(K-j).
struct MsmCoefficients {
  double intercept = 0;
  Eigen::VectorXd psi;
};

MsmCoefficients msm_coefficients(const EnumerableDgp& dgp);

// E[Y^a] for every regime (bit k of the index carries a(k)), by summing the
// covariate paths under forced treatment. Third route: cross-checks both
// msm_coefficients (exact linearity) and exact_limits.theta_K.
Eigen::VectorXd regime_means(const EnumerableDgp& dgp);

// Supplied-probability sets for estimation with true rather than fitted
// weights.
//
// Denominators are the generating probabilities carried in TruthRecord; the
// numerators marginalize the covariates, which has no closed form in
// general, so they are empirical means over treatment-history cells: the
// full history for mean panels (K is small), the lag-1 history for survival
// panels (where the treatment process is Markov given the previous
// treatment, making lag-1 cells exact).
//
// rsw_window_start >= 0 restricts the cell history to A(start..k-1) for
// periods k >= start, matching the restricted weights' in-window numerator
// at window start K-m.
SuppliedProbs empirical_true_probs(const LongPanel& panel, const TruthRecord& truth,
                                   int rsw_window_start = -1);

// Same idea for a sampled enumerable panel, with the numerators computed
// exactly from the joint law instead of empirically.
SuppliedProbs exact_probs(const EnumerableDgp& dgp, const LongPanel& panel,
                          int rsw_window_start = -1);

// Population limit of a weighted estimator under the four-period normal
// process, approximated by one large true-weight draw of size n.
double mc_truth(const NormalDgpConfig& cfg, WeightKind kind, int m, ModelForm form, int n,
                std::uint64_t seed);

}  // namespace pmsm
