#include "pmsm/select.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pmsm {

SelectionResult closed_test_select(const WeightBuilder& builder, SelectionOptions opts) {
  const LongPanel& panel = builder.panel();
  int m_max = opts.m_max;
  if (m_max < 0)
    m_max = (panel.mode() == OutcomeMode::Survival) ? std::min(10, panel.K()) : panel.K();
  if (m_max < 1 || m_max > panel.K())
    throw std::invalid_argument("selection m_max out of [1,K]");
  if (opts.start_m < 0 || opts.start_m >= m_max)
    throw std::invalid_argument("selection start_m out of [0, m_max)");
  opts.m_max = m_max;

  WeightKind against =
      (opts.variant == SelectionVariant::ZTest) ? WeightKind::SW : WeightKind::PSW;

  // Saturated contrasts and hazard fits test agreement on the paired
  // influence variance, the exact variance of the difference. Main-effect
  // WLS comparisons instead sum the two fits' own sandwich variances; see
  // PairVariance for what the wider yardstick does to the scan.
  bool separate_fits =
      panel.mode() != OutcomeMode::Survival && opts.form == ModelForm::MainEffect;
  PairVariance rule =
      separate_fits ? PairVariance::SeparateFits : PairVariance::PairedInfluence;

  SelectionResult res;
  res.opts = opts;
  int m = opts.start_m;
  while (true) {
    ++m;
    if (m > m_max - 1) break;  // every smaller window rejected: take m_max untested
    EstimateResult a = estimate_at(builder, against, m, opts.form, opts.adjust_baseline);
    EstimateResult b = estimate_at(builder, WeightKind::RSW, m, opts.form, opts.adjust_baseline);
    PairTest t = pair_test(a, b, opts.alpha, rule);
    res.path.push_back(t);
    if (!t.rejected) break;
  }
  res.selected_m = m;
  return res;
}

std::string selection_report(const SelectionResult& result) {
  std::ostringstream out;
  const char* against = result.opts.variant == SelectionVariant::ZTest ? "SW" : "PSW";
  out << "window selection (" << against << " vs RSW, alpha=" << result.opts.alpha << ")\n";
  for (const PairTest& t : result.path) {
    out << "  m=" << t.m << ": diff=" << t.difference << ", d=" << t.d << ", p=" << t.p_value
        << (t.rejected ? "  rejected" : "  not rejected") << "\n";
  }
  if (result.path.empty() || result.path.back().rejected)
    out << "  all candidates below m=" << result.selected_m << " rejected\n";
  out << "selected m = " << result.selected_m << "\n";
  return out.str();
}

std::string selection_json(const SelectionResult& result) {
  nlohmann::json j;
  j["variant"] = result.opts.variant == SelectionVariant::ZTest ? "ztest" : "pztest";
  j["alpha"] = result.opts.alpha;
  j["selected_m"] = result.selected_m;
  j["path"] = nlohmann::json::array();
  for (const PairTest& t : result.path) {
    j["path"].push_back(
        {{"m", t.m}, {"d", t.d}, {"p_value", t.p_value}, {"rejected", t.rejected}});
  }
  return j.dump(2);
}

}  // namespace pmsm
