#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmsm/dgp.hpp"
#include "pmsm/estimate.hpp"
#include "pmsm/select.hpp"

namespace pmsm {

// One selection-plus-estimation policy evaluated by the study: which pair
// test drives window selection, at what level, and whether the baseline
// covariate is adjusted for (in the weight numerators and the outcome
// model).
struct McMethod {
  std::string name;
  SelectionVariant variant = SelectionVariant::ZTest;
  double alpha = 0.05;
  bool adjust = false;
};

// Parses compact method labels: "ztest05", "pztest20", "ztest05adj" -
// variant, two-digit alpha percentage, optional adjustment suffix.
McMethod standard_method(const std::string& name);

struct McConfig {
  OutcomeMode mode = OutcomeMode::Mean;
  NormalDgpConfig normal;      // generating process when mode == Mean
  SurvivalDgpConfig survival;  // generating process when mode == Survival
  ModelForm form = ModelForm::Saturated;
  int reps = 1000;
  std::uint64_t seed = 1;  // master seed; replication r uses stream (seed, r)
  int threads = 1;
  int m_max = -1;  // -1: K for mean outcomes, min(10, K) for survival
  // Estimate with supplied true-probability weights (generating denominators
  // plus empirical-cell numerators) instead of fitted models. The restricted
  // weights then keep the full-history numerator cells, which for the mean
  // process conditions slightly more finely than the in-window definition.
  bool true_weights = false;
  std::optional<std::pair<double, double>> truncate_values;
  std::optional<double> truncate_pct;
  std::vector<McMethod> methods;
};

// Distribution of the selected window for one method. prob[j] estimates
// P[selected m = j+1]; failures counts replications where selection itself
// errored (those are excluded from every row of the method).
struct SelectionRow {
  std::string method;
  std::vector<double> prob;
  int n_used = 0;
  int failures = 0;
};

// Repeated-sampling performance of one estimator plugged in at the selected
// window: bias and coverage against the generating contrast, the population
// (divide-by-N) standard error, and rmse^2 = bias^2 + se^2 exactly.
struct EstimateRow {
  std::string method;
  EstimatorKind kind = EstimatorKind::SW;
  double bias = 0, se = 0, rmse = 0, coverage = 0;
  double mean_selected_m = 0;
  int n_used = 0;
  int failures = 0;
};

struct McReport {
  OutcomeMode mode = OutcomeMode::Mean;
  ModelForm form = ModelForm::Saturated;
  int reps = 0;
  int m_max = 0;
  double theta_true = 0;
  int m_star = 0;
  std::uint64_t seed = 0;
  std::vector<SelectionRow> selection;
  std::vector<EstimateRow> estimates;
};

// The estimators reported for a method: SW, RSW, PSW, and for SW-based
// selection also the two pretested combinations.
std::vector<EstimatorKind> method_estimators(const McMethod& method);

// Runs the full study: per replication, simulate, fit weight models, select
// a window per method, and estimate with every reported estimator at the
// selected window. Deterministic for a fixed seed regardless of threads.
McReport run_mc(const McConfig& cfg);

std::string to_json(const McReport& report);

// Writes selection.csv and estimates.csv under `dir`.
void write_csv(const McReport& report, const std::string& dir);

// Rejection rate of the agreement test at a fixed window (size/power
// diagnostic): per replication, simulate from `cfg` and test SW (or PSW)
// against RSW at window m and level alpha.
struct CalibrationResult {
  int reps = 0;
  int rejections = 0;
  int failures = 0;
  double rate = 0;
};

CalibrationResult pair_rejection_rate(const NormalDgpConfig& cfg, int m, double alpha,
                                      SelectionVariant variant, ModelForm form, int reps,
                                      std::uint64_t seed, int threads);

}  // namespace pmsm
