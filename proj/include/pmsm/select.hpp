#pragma once

#include <string>
#include <vector>

#include "pmsm/estimate.hpp"
#include "pmsm/infer.hpp"

namespace pmsm {

// Which estimator is compared against RSW at each candidate window: ZTest
// uses the full-history SW estimator, PZTest the partial-history PSW one.
enum class SelectionVariant { ZTest, PZTest };

struct SelectionOptions {
  double alpha = 0.05;
  SelectionVariant variant = SelectionVariant::ZTest;
  ModelForm form = ModelForm::Saturated;
  bool adjust_baseline = false;
  // The sequence starts below the first candidate: the first tested window
  // is start_m + 1.
  int start_m = 0;
  // Largest admissible window; -1 selects the default (K for mean outcomes,
  // min(10, K) for survival). Candidates 1..m_max-1 are tested; m_max is
  // returned untested when every smaller window is rejected.
  int m_max = -1;
};

struct SelectionResult {
  int selected_m = 0;
  SelectionOptions opts;
  std::vector<PairTest> path;  // one entry per tested window, in order
};

// Sequential agreement testing over increasing windows: accept the first
// window whose SW-vs-RSW (or PSW-vs-RSW) test does not reject.
SelectionResult closed_test_select(const WeightBuilder& builder, SelectionOptions opts);

// Human-readable trace of the selection path.
std::string selection_report(const SelectionResult& result);

// Compact machine-readable form:
// {"variant","alpha","selected_m","path":[{"m","d","p_value","rejected"},...]}.
std::string selection_json(const SelectionResult& result);

}  // namespace pmsm
