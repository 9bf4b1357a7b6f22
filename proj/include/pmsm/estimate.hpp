#pragma once

#include <Eigen/Core>
#include <optional>
#include <stdexcept>
#include <string>

#include "pmsm/ipw.hpp"
#include "pmsm/panel.hpp"

namespace pmsm {

// SW/RSW/PSW estimate the window-m contrast with the matching weights.
// SW_PSW and RSW_PSW are the pretested combinations: use PSW unless a pair
// test rejects its agreement with the base estimator, in which case fall
// back to the base.
enum class EstimatorKind { SW, RSW, PSW, SW_PSW, RSW_PSW };

// Outcome model for the mean modes. Saturated fits one cell mean per
// length-m treatment pattern; MainEffect fits an additive model in
// A(K-1),...,A(K-m). Survival always uses the additive hazard-ratio form.
enum class ModelForm { Saturated, MainEffect };

// Thrown when the requested contrast cannot be formed from the data (an
// empty regime arm, no events, and the like) as opposed to a numerical
// failure inside a fit (FitError).
class EstimabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EstimateResult {
  EstimatorKind kind = EstimatorKind::SW;
  WeightKind weights_used = WeightKind::SW;  // branch taken, for combined kinds
  ModelForm form = ModelForm::Saturated;
  int m = 0;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double variance = std::numeric_limits<double>::quiet_NaN();
  // Per-subject influence values, full panel length with zeros for subjects
  // the estimator excludes; variance == sum(influence^2) / n^2.
  Eigen::VectorXd influence;
  int n = 0;
  int n_arm1 = -1, n_arm0 = -1;            // regime-arm sizes (mean modes)
  int n_events = -1;                       // weighted-risk-set events (survival)
  std::optional<bool> pretest_rejected;    // combined kinds only
};

// Subjects following each regime arm for a window of length m: treated (or
// untreated) at every k in [K-m, K), and uncensored through K when the panel
// has censoring. Entries are 0/1 per subject.
struct ContrastArms {
  Eigen::VectorXi arm1, arm0;
  int n_arm1 = 0, n_arm0 = 0;
};
ContrastArms contrast_arms(const LongPanel& panel, int m);

// Hajek weighted-mean contrast between the two regime arms.
EstimateResult contrast_estimate(const LongPanel& panel, const WeightSet& ws, int m);

// Weighted least squares on the chosen model form; the estimate is the
// all-treated vs all-untreated contrast over the window. adjust_baseline
// adds L(0) to the regressors.
EstimateResult wls_estimate(const LongPanel& panel, const WeightSet& ws, int m, ModelForm form,
                            bool adjust_baseline = false);

// Discrete-time weighted Cox fit of the event hazard on A(t-1),...,A(t-m)
// (zero-padded before entry); the estimate is the sum of the m log hazard
// ratios, i.e. the long-run all-treated vs all-untreated log contrast.
EstimateResult cox_estimate(const LongPanel& panel, const WeightSet& ws, int m);

// Builds weights of the given kind and dispatches on the panel's outcome
// mode (WLS for mean panels, Cox for survival panels).
EstimateResult estimate_at(const WeightBuilder& builder, WeightKind kind, int m, ModelForm form,
                           bool adjust_baseline = false);

// Pretested combination: estimate with PSW, pair-test it against the base
// kind (SW or RSW) at level alpha, and return the base estimate when the
// test rejects. The reported variance is the chosen branch's own variance.
EstimateResult combined_estimate(const WeightBuilder& builder, WeightKind base, int m,
                                 ModelForm form, double alpha, bool adjust_baseline = false);

}  // namespace pmsm
