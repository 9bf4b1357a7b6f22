#include "pmsm/ipw.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pmsm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// What a pooled probability model conditions on. Covariate order:
// [intercept | time dummies | L(k) | L(0) | A(k) | A(k-1..k-lags)].
struct RoleSpec {
  bool censor_outcome = false;  // fit C(k+1) instead of A(k)
  bool use_L = false;
  bool use_L0 = false;
  bool use_A_current = false;
  int a_lags = 0;
};

int lagged_treatment(const LongPanel& p, int i, int k, int lag) {
  int kk = k - lag;
  return kk < 0 ? 0 : p.A()(i, kk);
}

// Assembles the design row for (i,k) given the dummy column map.
void fill_row(const LongPanel& p, const RoleSpec& role, const std::vector<int>& dummy_col,
              int i, int k, Eigen::MatrixXd& X, int r) {
  int c = 0;
  X(r, c++) = 1.0;
  for (std::size_t d = 0; d < dummy_col.size(); ++d) X(r, c++) = (k == dummy_col[d]) ? 1.0 : 0.0;
  const int q = p.q();
  if (role.use_L)
    for (int j = 0; j < q; ++j) X(r, c++) = p.L()(i, k * q + j);
  if (role.use_L0)
    for (int j = 0; j < q; ++j) X(r, c++) = p.L()(i, j);
  if (role.use_A_current) X(r, c++) = p.A()(i, k);
  for (int lag = 1; lag <= role.a_lags; ++lag) X(r, c++) = lagged_treatment(p, i, k, lag);
}

// Fits one pooled (or per-period) logistic model and returns fitted
// probabilities as an n x K matrix, NaN off risk.
Eigen::MatrixXd fit_role_probs(const LongPanel& p, const WeightModelSpec& spec,
                               const RoleSpec& role) {
  const int n = p.n(), K = p.K(), q = p.q();
  std::vector<std::pair<int, int>> rows;  // (subject, period)
  std::vector<char> seen_k(K, 0);
  for (int i = 0; i < n; ++i) {
    int periods = p.n_periods(i);
    for (int k = 0; k < periods; ++k) {
      rows.push_back({i, k});
      seen_k[k] = 1;
    }
  }
  if (rows.empty()) throw std::invalid_argument("weight model: no at-risk person-periods");

  Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(n, K, kNaN);
  auto outcome_of = [&](int i, int k) {
    return role.censor_outcome ? static_cast<double>(p.C()(i, k))
                               : static_cast<double>(p.A()(i, k));
  };

  if (spec.time_effect == TimeEffect::PerK) {
    for (int k = 0; k < K; ++k) {
      if (!seen_k[k]) continue;
      std::vector<int> subjects;
      for (const auto& r : rows)
        if (r.second == k) subjects.push_back(r.first);
      const int nk = static_cast<int>(subjects.size());
      int width = 1 + (role.use_L ? q : 0) + (role.use_L0 ? q : 0) + (role.use_A_current ? 1 : 0) +
                  role.a_lags;
      Eigen::MatrixXd X(nk, width);
      Eigen::VectorXd y(nk);
      for (int r = 0; r < nk; ++r) {
        fill_row(p, role, {}, subjects[r], k, X, r);
        y(r) = outcome_of(subjects[r], k);
      }
      // Drop non-intercept columns that are constant within this period
      // (e.g. A(k-1) at k=0) or duplicate an earlier kept column (L(0)
      // duplicates L(k) at k=0); either way they are collinear.
      std::vector<int> keep{0};
      for (int c = 1; c < width; ++c) {
        double lo = X.col(c).minCoeff(), hi = X.col(c).maxCoeff();
        if (hi - lo <= 1e-12) continue;
        bool dup = false;
        for (int kc : keep) {
          if (kc == 0) continue;
          if ((X.col(c) - X.col(kc)).cwiseAbs().maxCoeff() <= 1e-12) {
            dup = true;
            break;
          }
        }
        if (!dup) keep.push_back(c);
      }
      Eigen::MatrixXd Xk(nk, static_cast<int>(keep.size()));
      for (std::size_t c = 0; c < keep.size(); ++c) Xk.col(c) = X.col(keep[c]);
      GlmFit fit = fit_weighted_logistic(Xk, y, Eigen::VectorXd::Ones(nk), spec.fit_options);
      Eigen::VectorXd eta = Xk * fit.beta;
      for (int r = 0; r < nk; ++r) probs(subjects[r], k) = expit(eta(r));
    }
    return probs;
  }

  std::vector<int> dummy_col;
  if (spec.time_effect == TimeEffect::Dummies) {
    bool first = true;
    for (int k = 0; k < K; ++k) {
      if (!seen_k[k]) continue;
      if (first) {
        first = false;  // reference period absorbed by the intercept
        continue;
      }
      dummy_col.push_back(k);
    }
  }
  int width = 1 + static_cast<int>(dummy_col.size()) + (role.use_L ? q : 0) +
              (role.use_L0 ? q : 0) + (role.use_A_current ? 1 : 0) + role.a_lags;
  const int nr = static_cast<int>(rows.size());
  Eigen::MatrixXd X(nr, width);
  Eigen::VectorXd y(nr);
  for (int r = 0; r < nr; ++r) {
    fill_row(p, role, dummy_col, rows[r].first, rows[r].second, X, r);
    y(r) = outcome_of(rows[r].first, rows[r].second);
  }
  GlmFit fit = fit_weighted_logistic(X, y, Eigen::VectorXd::Ones(nr), spec.fit_options);
  Eigen::VectorXd eta = X * fit.beta;
  for (int r = 0; r < nr; ++r) probs(rows[r].first, rows[r].second) = expit(eta(r));
  return probs;
}

void check_supplied(const Eigen::MatrixXd& mat, int n, int K, const char* name) {
  if (mat.rows() != n || mat.cols() != K)
    throw std::invalid_argument(std::string("supplied probabilities: bad shape for ") + name);
}

}  // namespace

WeightModelSpec WeightModelSpec::defaults(OutcomeMode mode) {
  WeightModelSpec s;
  s.time_effect = (mode == OutcomeMode::Survival) ? TimeEffect::None : TimeEffect::Dummies;
  s.den_use_L0 = (mode != OutcomeMode::Survival);
  return s;
}

WeightBuilder::WeightBuilder(const LongPanel& panel, WeightModelSpec spec)
    : panel_(&panel), spec_(std::move(spec)) {
  std::vector<Violation> bad = validate(panel);
  if (!bad.empty())
    throw std::invalid_argument("panel fails validation: " + bad.front().rule + " (subject " +
                                std::to_string(bad.front().subject) + ", t=" +
                                std::to_string(bad.front().time) + ")");
  const int n = panel.n(), K = panel.K();

  if (spec_.supplied) {
    const SuppliedProbs& s = *spec_.supplied;
    check_supplied(s.treat_den, n, K, "treat_den");
    check_supplied(s.treat_num, n, K, "treat_num");
    check_supplied(s.treat_num_marginal, n, K, "treat_num_marginal");
    treat_den_ = s.treat_den;
    treat_num_ = s.treat_num;
    treat_num_marginal_ = s.treat_num_marginal;
    if (panel.has_censoring()) {
      check_supplied(s.cens_den, n, K, "cens_den");
      check_supplied(s.cens_num, n, K, "cens_num");
      check_supplied(s.cens_num_start, n, K, "cens_num_start");
      cens_den_ = s.cens_den;
      cens_num_ = s.cens_num;
      cens_num_start_ = s.cens_num_start;
    }
    return;
  }

  RoleSpec den;
  den.use_L = true;
  den.use_L0 = spec_.den_use_L0;
  den.a_lags = spec_.den_treat_lags;
  treat_den_ = fit_role_probs(panel, spec_, den);

  RoleSpec num;
  num.a_lags = spec_.num_treat_lags;
  num.use_L0 = spec_.num_use_L0;
  treat_num_ = fit_role_probs(panel, spec_, num);

  RoleSpec marginal;
  marginal.use_L0 = spec_.num_use_L0;
  treat_num_marginal_ = fit_role_probs(panel, spec_, marginal);

  if (panel.has_censoring()) {
    RoleSpec cden;
    cden.censor_outcome = true;
    cden.use_L = true;
    cden.use_L0 = spec_.cens_den_use_L0;
    cden.use_A_current = true;
    cden.a_lags = spec_.cens_den_treat_lags;
    cens_den_ = fit_role_probs(panel, spec_, cden);

    RoleSpec cnum;
    cnum.censor_outcome = true;
    cnum.use_A_current = true;
    cnum.a_lags = spec_.cens_num_treat_lags;
    cnum.use_L0 = spec_.num_use_L0;
    cens_num_ = fit_role_probs(panel, spec_, cnum);

    RoleSpec cstart;
    cstart.censor_outcome = true;
    cstart.use_A_current = true;
    cstart.use_L0 = spec_.num_use_L0;
    cens_num_start_ = fit_role_probs(panel, spec_, cstart);
  }
}

namespace {

// Probability of the observed category with the positivity floor applied.
double category_prob(double p1, int a, double floor, int& floored) {
  if (p1 < floor || p1 > 1 - floor) {
    ++floored;
    p1 = std::min(std::max(p1, floor), 1 - floor);
  }
  return a ? p1 : 1 - p1;
}

// Probability of remaining uncensored given the fitted hazard.
double survival_prob(double hazard, double floor, int& floored) {
  if (hazard < floor || hazard > 1 - floor) {
    ++floored;
    hazard = std::min(std::max(hazard, floor), 1 - floor);
  }
  return 1 - hazard;
}

}  // namespace

WeightSet WeightBuilder::build(WeightKind kind, int m) const {
  const LongPanel& p = *panel_;
  if (m < 1 || m > p.K()) throw std::invalid_argument("build_weights: m out of range [1,K]");
  if (kind == WeightKind::RSW && !spec_.supplied && spec_.num_treat_lags != 1)
    throw std::invalid_argument(
        "RSW weights require numerator lag depth 1 (window-interior factors share the "
        "lag-1 numerator model)");
  WeightSet ws = (p.mode() == OutcomeMode::Survival) ? build_survival(kind, m)
                                                     : build_mean(kind, m);
  finalize(ws);
  return ws;
}

WeightSet WeightBuilder::build_mean(WeightKind kind, int m) const {
  const LongPanel& p = *panel_;
  const int n = p.n(), K = p.K();
  const double floor = spec_.prob_floor;
  WeightSet ws;
  ws.kind = kind;
  ws.m = m;
  ws.mode = OutcomeMode::Mean;
  ws.values = Eigen::VectorXd::Constant(n, kNaN);
  const int start = (kind == WeightKind::SW) ? 0 : K - m;
  int floored = 0;
  for (int i = 0; i < n; ++i) {
    if (p.has_censoring() && !p.outcome_observed(i)) continue;  // weight undefined
    double w = 1.0;
    for (int k = start; k < K; ++k) {
      int a = p.A()(i, k);
      bool marginal_start = (kind == WeightKind::RSW && k == start && start > 0);
      double num_p = marginal_start ? treat_num_marginal_(i, k) : treat_num_(i, k);
      w *= category_prob(num_p, a, floor, floored) /
           category_prob(treat_den_(i, k), a, floor, floored);
      if (p.has_censoring()) {
        double num_h = marginal_start ? cens_num_start_(i, k) : cens_num_(i, k);
        w *= survival_prob(num_h, floor, floored) /
             survival_prob(cens_den_(i, k), floor, floored);
      }
    }
    ws.values(i) = w;
  }
  ws.floored = floored;
  return ws;
}

WeightSet WeightBuilder::build_survival(WeightKind kind, int m) const {
  const LongPanel& p = *panel_;
  const int n = p.n(), K = p.K();
  const double floor = spec_.prob_floor;
  WeightSet ws;
  ws.kind = kind;
  ws.m = m;
  ws.mode = OutcomeMode::Survival;
  ws.values_t = Eigen::MatrixXd::Constant(n, K, kNaN);
  int floored = 0;
  for (int i = 0; i < n; ++i) {
    int periods = p.n_periods(i);
    // Incremental products would be possible for SW; the window products are
    // short, so recompute per (i,t) for clarity.
    for (int t = 1; t <= periods; ++t) {
      int start = (kind == WeightKind::SW) ? 0 : std::max(0, t - m);
      double w = 1.0;
      for (int k = start; k < t; ++k) {
        int a = p.A()(i, k);
        bool marginal_start = (kind == WeightKind::RSW && k == start && start > 0);
        double num_p = marginal_start ? treat_num_marginal_(i, k) : treat_num_(i, k);
        w *= category_prob(num_p, a, floor, floored) /
             category_prob(treat_den_(i, k), a, floor, floored);
        if (p.has_censoring()) {
          double num_h = marginal_start ? cens_num_start_(i, k) : cens_num_(i, k);
          w *= survival_prob(num_h, floor, floored) /
               survival_prob(cens_den_(i, k), floor, floored);
        }
      }
      ws.values_t(i, t - 1) = w;
    }
  }
  ws.floored = floored;
  return ws;
}

void WeightBuilder::finalize(WeightSet& ws) const {
  std::vector<double*> cells;
  if (ws.mode == OutcomeMode::Survival) {
    for (int i = 0; i < ws.values_t.rows(); ++i)
      for (int c = 0; c < ws.values_t.cols(); ++c)
        if (!std::isnan(ws.values_t(i, c))) cells.push_back(&ws.values_t(i, c));
  } else {
    for (int i = 0; i < ws.values.size(); ++i)
      if (!std::isnan(ws.values(i))) cells.push_back(&ws.values(i));
  }
  for (double* v : cells)
    if (!std::isfinite(*v) || *v <= 0)
      throw std::runtime_error("weight construction produced a non-positive or non-finite value");

  std::optional<std::pair<double, double>> bounds = spec_.truncate_values;
  if (!bounds && spec_.truncate_pct) {
    double q = *spec_.truncate_pct;
    if (q <= 0 || q >= 0.5) throw std::invalid_argument("truncate_pct must be in (0, 0.5)");
    std::vector<double> sorted(cells.size());
    for (std::size_t ix = 0; ix < cells.size(); ++ix) sorted[ix] = *cells[ix];
    std::sort(sorted.begin(), sorted.end());
    auto at = [&](double frac) {
      std::size_t idx = static_cast<std::size_t>(frac * (sorted.size() - 1));
      return sorted[idx];
    };
    bounds = {at(q), at(1 - q)};
  }
  if (bounds) {
    if (bounds->first > bounds->second)
      throw std::invalid_argument("truncation bounds must satisfy lo <= hi");
    int truncated = 0;
    for (double* v : cells) {
      if (*v < bounds->first) {
        *v = bounds->first;
        ++truncated;
      } else if (*v > bounds->second) {
        *v = bounds->second;
        ++truncated;
      }
    }
    ws.truncated = truncated;
    ws.bounds_applied = bounds;
  }
}

WeightSummary weight_summary(const WeightSet& ws) {
  WeightSummary s;
  s.floored = ws.floored;
  s.truncated = ws.truncated;
  std::vector<double> vals;
  if (ws.mode == OutcomeMode::Survival) {
    for (int i = 0; i < ws.values_t.rows(); ++i)
      for (int c = 0; c < ws.values_t.cols(); ++c)
        if (!std::isnan(ws.values_t(i, c))) vals.push_back(ws.values_t(i, c));
  } else {
    for (int i = 0; i < ws.values.size(); ++i)
      if (!std::isnan(ws.values(i))) vals.push_back(ws.values(i));
  }
  s.count = static_cast<int>(vals.size());
  if (vals.empty()) return s;
  double sum = std::accumulate(vals.begin(), vals.end(), 0.0);
  s.mean = sum / s.count;
  double ss = 0;
  for (double v : vals) ss += (v - s.mean) * (v - s.mean);
  s.sd = s.count > 1 ? std::sqrt(ss / (s.count - 1)) : 0.0;
  s.min = *std::min_element(vals.begin(), vals.end());
  s.max = *std::max_element(vals.begin(), vals.end());
  return s;
}

WeightSet build_weights(const LongPanel& panel, const WeightModelSpec& spec, WeightKind kind,
                        int m) {
  if (panel.mode() == OutcomeMode::Survival)
    throw std::invalid_argument("build_weights: survival panel; use build_survival_weights");
  return WeightBuilder(panel, spec).build(kind, m);
}

WeightSet build_survival_weights(const LongPanel& panel, const WeightModelSpec& spec,
                                 WeightKind kind, int m) {
  if (panel.mode() != OutcomeMode::Survival)
    throw std::invalid_argument("build_survival_weights: panel is not in survival mode");
  return WeightBuilder(panel, spec).build(kind, m);
}

}  // namespace pmsm
