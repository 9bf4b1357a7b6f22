#include "pmsm/estimate.hpp"

#include <cmath>
#include <map>
#include <vector>

#include "pmsm/infer.hpp"

namespace pmsm {

namespace {

EstimatorKind to_estimator_kind(WeightKind k) {
  switch (k) {
    case WeightKind::SW: return EstimatorKind::SW;
    case WeightKind::RSW: return EstimatorKind::RSW;
    default: return EstimatorKind::PSW;
  }
}

void check_weight_set(const LongPanel& panel, const WeightSet& ws, int m, OutcomeMode mode) {
  if (ws.mode != mode)
    throw std::invalid_argument("weight set outcome mode does not match the estimator");
  if (ws.m != m) throw std::invalid_argument("weight set was built for a different window m");
  if (m < 1 || m > panel.K()) throw std::invalid_argument("estimator window m out of [1,K]");
}

// Treatment pattern over the window [K-m, K), bit j holding A(K-m+j).
int window_pattern(const LongPanel& panel, int i, int m) {
  int bits = 0;
  const int K = panel.K();
  for (int j = 0; j < m; ++j) bits |= panel.A()(i, K - m + j) << j;
  return bits;
}

}  // namespace

ContrastArms contrast_arms(const LongPanel& panel, int m) {
  if (panel.mode() == OutcomeMode::Survival)
    throw std::invalid_argument("contrast arms are defined for mean-outcome panels");
  if (m < 1 || m > panel.K()) throw std::invalid_argument("contrast window m out of [1,K]");
  const int n = panel.n(), K = panel.K();
  ContrastArms arms;
  arms.arm1 = Eigen::VectorXi::Zero(n);
  arms.arm0 = Eigen::VectorXi::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (panel.has_censoring() && !panel.outcome_observed(i)) continue;  // outcome missing
    bool all1 = true, all0 = true;
    for (int k = K - m; k < K; ++k) {
      if (panel.A()(i, k) == 1)
        all0 = false;
      else
        all1 = false;
    }
    if (all1) {
      arms.arm1(i) = 1;
      ++arms.n_arm1;
    } else if (all0) {
      arms.arm0(i) = 1;
      ++arms.n_arm0;
    }
  }
  return arms;
}

EstimateResult contrast_estimate(const LongPanel& panel, const WeightSet& ws, int m) {
  check_weight_set(panel, ws, m, OutcomeMode::Mean);
  ContrastArms arms = contrast_arms(panel, m);
  if (arms.n_arm1 == 0 || arms.n_arm0 == 0)
    throw EstimabilityError("empty regime arm: no subject is " +
                            std::string(arms.n_arm1 == 0 ? "treated" : "untreated") +
                            " throughout the window");
  const int n = panel.n();
  double s1 = 0, s1y = 0, s0 = 0, s0y = 0;
  for (int i = 0; i < n; ++i) {
    if (arms.arm1(i)) {
      s1 += ws.values(i);
      s1y += ws.values(i) * panel.Y()(i);
    } else if (arms.arm0(i)) {
      s0 += ws.values(i);
      s0y += ws.values(i) * panel.Y()(i);
    }
  }
  double p1 = s1 / n, p0 = s0 / n;
  double mu1 = s1y / s1, mu0 = s0y / s0;

  EstimateResult r;
  r.kind = to_estimator_kind(ws.kind);
  r.weights_used = ws.kind;
  r.form = ModelForm::Saturated;
  r.m = m;
  r.n = n;
  r.n_arm1 = arms.n_arm1;
  r.n_arm0 = arms.n_arm0;
  r.estimate = mu1 - mu0;
  r.influence = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (arms.arm1(i))
      r.influence(i) = ws.values(i) * (panel.Y()(i) - mu1) / p1;
    else if (arms.arm0(i))
      r.influence(i) = -ws.values(i) * (panel.Y()(i) - mu0) / p0;
  }
  r.variance = r.influence.squaredNorm() / (static_cast<double>(n) * n);
  return r;
}

EstimateResult wls_estimate(const LongPanel& panel, const WeightSet& ws, int m, ModelForm form,
                            bool adjust_baseline) {
  check_weight_set(panel, ws, m, OutcomeMode::Mean);
  const int n = panel.n(), K = panel.K(), q = panel.q();

  std::vector<int> idx;  // subjects with a defined weight (observed outcome)
  for (int i = 0; i < n; ++i)
    if (!std::isnan(ws.values(i))) idx.push_back(i);
  const int nr = static_cast<int>(idx.size());
  if (nr == 0) throw EstimabilityError("every subject is censored before the outcome");

  int p = 0;
  std::map<int, int> cell_col;  // saturated form: treatment pattern -> column
  if (form == ModelForm::Saturated) {
    for (int r = 0; r < nr; ++r) {
      int pat = window_pattern(panel, idx[r], m);
      if (!cell_col.count(pat)) cell_col[pat] = 0;
    }
    int c = 0;
    for (auto& kv : cell_col) kv.second = c++;
    p = c;
    if (!cell_col.count((1 << m) - 1) || !cell_col.count(0))
      throw EstimabilityError("empty regime arm: no subject is " +
                              std::string(cell_col.count((1 << m) - 1) ? "untreated" : "treated") +
                              " throughout the window");
  } else {
    p = 1 + m;
  }
  int l0_off = p;
  if (adjust_baseline) p += q;

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(nr, p);
  Eigen::VectorXd y(nr), w(nr);
  int n_arm1 = 0, n_arm0 = 0;
  for (int r = 0; r < nr; ++r) {
    int i = idx[r];
    int pat = window_pattern(panel, i, m);
    if (pat == (1 << m) - 1) ++n_arm1;
    if (pat == 0) ++n_arm0;
    if (form == ModelForm::Saturated) {
      X(r, cell_col.at(pat)) = 1.0;
    } else {
      X(r, 0) = 1.0;
      for (int j = 1; j <= m; ++j) X(r, j) = panel.A()(i, K - j);
    }
    if (adjust_baseline)
      for (int j = 0; j < q; ++j) X(r, l0_off + j) = panel.L()(i, j);
    y(r) = panel.Y()(i);
    w(r) = ws.values(i);
  }

  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  if (form == ModelForm::Saturated) {
    c(cell_col.at((1 << m) - 1)) = 1.0;
    c(cell_col.at(0)) = -1.0;
  } else {
    for (int j = 1; j <= m; ++j) c(j) = 1.0;
  }

  GlmFit fit = fit_wls(X, y, w);

  EstimateResult r;
  r.kind = to_estimator_kind(ws.kind);
  r.weights_used = ws.kind;
  r.form = form;
  r.m = m;
  r.n = n;
  r.n_arm1 = n_arm1;
  r.n_arm0 = n_arm0;
  r.estimate = c.dot(fit.beta);
  r.influence = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd bc = fit.bread * c;
  for (int rr = 0; rr < nr; ++rr) r.influence(idx[rr]) = n * fit.score.row(rr).dot(bc);
  r.variance = r.influence.squaredNorm() / (static_cast<double>(n) * n);
  return r;
}

EstimateResult cox_estimate(const LongPanel& panel, const WeightSet& ws, int m) {
  check_weight_set(panel, ws, m, OutcomeMode::Survival);
  const int n = panel.n();

  CoxData d;
  d.n_subjects = n;
  std::vector<double> xbuf, wbuf;
  int n_events = 0;
  for (int i = 0; i < n; ++i) {
    int periods = panel.n_periods(i);
    int last = panel.exited_by_censoring(i) ? periods - 1 : periods;
    for (int t = 1; t <= last; ++t) {
      d.subject.push_back(i);
      d.time.push_back(t);
      bool ev = (t == periods) && panel.exited_by_event(i);
      d.event.push_back(ev ? 1 : 0);
      if (ev) ++n_events;
      for (int j = 1; j <= m; ++j) xbuf.push_back(t - j >= 0 ? panel.A()(i, t - j) : 0.0);
      wbuf.push_back(ws.values_t(i, t - 1));
    }
  }
  if (n_events == 0) throw EstimabilityError("no events: the hazard contrast is not estimable");
  const int rows = static_cast<int>(d.subject.size());
  d.x.resize(rows, m);
  d.weight.resize(rows);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < m; ++j) d.x(r, j) = xbuf[static_cast<std::size_t>(r) * m + j];
    d.weight(r) = wbuf[r];
  }

  GlmFit fit = fit_weighted_cox(d);

  EstimateResult r;
  r.kind = to_estimator_kind(ws.kind);
  r.weights_used = ws.kind;
  r.form = ModelForm::MainEffect;
  r.m = m;
  r.n = n;
  r.n_events = n_events;
  r.estimate = fit.beta.sum();
  Eigen::VectorXd c = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd bc = fit.bread * c;
  r.influence = n * (fit.score * bc);
  r.variance = r.influence.squaredNorm() / (static_cast<double>(n) * n);
  return r;
}

EstimateResult estimate_at(const WeightBuilder& builder, WeightKind kind, int m, ModelForm form,
                           bool adjust_baseline) {
  const LongPanel& panel = builder.panel();
  WeightSet ws = builder.build(kind, m);
  if (panel.mode() == OutcomeMode::Survival) {
    if (adjust_baseline)
      throw std::invalid_argument("baseline adjustment applies to mean-outcome panels");
    return cox_estimate(panel, ws, m);
  }
  return wls_estimate(panel, ws, m, form, adjust_baseline);
}

EstimateResult combined_estimate(const WeightBuilder& builder, WeightKind base, int m,
                                 ModelForm form, double alpha, bool adjust_baseline) {
  if (base == WeightKind::PSW)
    throw std::invalid_argument("combined estimator base must be SW or RSW");
  EstimateResult psw = estimate_at(builder, WeightKind::PSW, m, form, adjust_baseline);
  EstimateResult ref = estimate_at(builder, base, m, form, adjust_baseline);
  // The pretest keeps the paired influence variance regardless of form: the
  // fallback only helps if disagreement is detected reliably, and the paired
  // scale is the sharper (correctly coupled) one for same-sample estimates.
  PairTest pt = pair_test(psw, ref, alpha);
  EstimateResult out = pt.rejected ? ref : psw;
  out.kind = (base == WeightKind::SW) ? EstimatorKind::SW_PSW : EstimatorKind::RSW_PSW;
  out.pretest_rejected = pt.rejected;
  return out;
}

}  // namespace pmsm
