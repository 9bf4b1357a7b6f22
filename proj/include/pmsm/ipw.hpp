#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <utility>

#include "pmsm/glm.hpp"
#include "pmsm/panel.hpp"

namespace pmsm {

// SW  : stabilized weights, product over the full history k = 0..K-1
//       (survival: 0..t-1) of f[A(k)|Abar(k-1)] / f[A(k)|Lbar(k),Abar(k-1)].
// RSW : restricted weights, product over the window only, with the numerator
//       conditioned on in-window treatment history alone.
// PSW : partial weights, product over the window only, with the numerator
//       conditioned on the full treatment history (same factors as SW).
// With censoring, each factor carries the matching ratio of probabilities of
// remaining uncensored.
enum class WeightKind { SW, RSW, PSW };

enum class TimeEffect { None, Dummies, PerK };

// Per-(subject, period) probabilities supplied directly instead of fitted
// (simulation truth, exact enumeration, hand-built tests). All matrices are
// n x K. Treatment entries are P[A(k)=1 | ...]; censoring entries are
// hazards P[C(k+1)=1 | ...]. NaN where the subject is not at risk.
struct SuppliedProbs {
  Eigen::MatrixXd treat_den;           // conditioned on covariate+treatment history
  Eigen::MatrixXd treat_num;           // conditioned on treatment history
  Eigen::MatrixXd treat_num_marginal;  // conditioned on nothing (window start)
  Eigen::MatrixXd cens_den, cens_num, cens_num_start;  // empty when unused
};

struct WeightModelSpec {
  TimeEffect time_effect = TimeEffect::Dummies;
  // Denominator history: L(k), optionally L(0), and A(k-1..k-den_treat_lags).
  bool den_use_L0 = true;
  int den_treat_lags = 1;
  // Numerator treatment-history depth for SW/PSW (RSW requires 1; its
  // window-interior factors share the SW/PSW numerator model and its
  // window-start factor uses a marginal fit).
  int num_treat_lags = 1;
  // Baseline-adjusted variant: numerators additionally condition on L(0).
  bool num_use_L0 = false;
  // Censoring models: denominators use L(k)(+L(0)) and A(k), A(k-1..);
  // numerators use A(k), A(k-1..).
  bool cens_den_use_L0 = false;
  int cens_den_treat_lags = 1;
  int cens_num_treat_lags = 1;

  double prob_floor = 1e-12;
  std::optional<std::pair<double, double>> truncate_values;  // clamp W into [lo,hi]
  std::optional<double> truncate_pct;  // symmetric percentile clamp, e.g. 0.01

  std::optional<SuppliedProbs> supplied;  // bypass model fitting entirely

  FitOptions fit_options;

  // Mean mode: pooled fits with time dummies; survival mode: time-constant
  // pooled fits (the natural default for stationary hazards, and much
  // cheaper over long follow-up).
  static WeightModelSpec defaults(OutcomeMode mode);
};

struct WeightSummary {
  int count = 0;
  double mean = 0, sd = 0, min = 0, max = 0;
  int floored = 0;    // probability evaluations caught by the positivity floor
  int truncated = 0;  // weight values clamped by explicit truncation
};

struct WeightSet {
  WeightKind kind = WeightKind::SW;
  int m = 0;
  OutcomeMode mode = OutcomeMode::Mean;
  // Mean mode: one weight per subject (NaN when the subject is censored
  // before K and the product is undefined).
  Eigen::VectorXd values;
  // Survival mode: values_t(i, t-1) = W_i(t) for risk time t; NaN off risk.
  Eigen::MatrixXd values_t;
  int floored = 0;
  int truncated = 0;
  std::optional<std::pair<double, double>> bounds_applied;
};

WeightSummary weight_summary(const WeightSet& ws);

// Fits the probability models for a panel once and assembles weight sets for
// any (kind, m) without refitting.
class WeightBuilder {
 public:
  WeightBuilder(const LongPanel& panel, WeightModelSpec spec);

  WeightSet build(WeightKind kind, int m) const;

  const LongPanel& panel() const { return *panel_; }
  const WeightModelSpec& spec() const { return spec_; }

  // Fitted probability matrices (n x K), exposed for tests and diagnostics.
  const Eigen::MatrixXd& treat_den() const { return treat_den_; }
  const Eigen::MatrixXd& treat_num() const { return treat_num_; }
  const Eigen::MatrixXd& treat_num_marginal() const { return treat_num_marginal_; }
  const Eigen::MatrixXd& cens_den() const { return cens_den_; }
  const Eigen::MatrixXd& cens_num() const { return cens_num_; }
  const Eigen::MatrixXd& cens_num_start() const { return cens_num_start_; }

 private:
  const LongPanel* panel_;
  WeightModelSpec spec_;
  Eigen::MatrixXd treat_den_, treat_num_, treat_num_marginal_;
  Eigen::MatrixXd cens_den_, cens_num_, cens_num_start_;

  WeightSet build_mean(WeightKind kind, int m) const;
  WeightSet build_survival(WeightKind kind, int m) const;
  void finalize(WeightSet& ws) const;
};

// One-shot conveniences matching the operation contracts.
WeightSet build_weights(const LongPanel& panel, const WeightModelSpec& spec, WeightKind kind,
                        int m);
WeightSet build_survival_weights(const LongPanel& panel, const WeightModelSpec& spec,
                                 WeightKind kind, int m);

}  // namespace pmsm
