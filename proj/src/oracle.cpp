#include "pmsm/oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pmsm/glm.hpp"

namespace pmsm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double category(double p1, int a) { return a ? p1 : 1 - p1; }

double treat_prob(const EnumerableDgp& d, int k, int l, int a_prev) {
  return expit(d.gA(k) + d.hA(k) * l + (k > 0 ? d.rA(k) * a_prev : 0.0));
}

double covar_prob(const EnumerableDgp& d, int k, int l_prev, int a_prev) {
  return k == 0 ? d.pL0 : d.cL(k) + d.eL(k) * l_prev + d.dL(k) * a_prev;
}

double path_outcome(const EnumerableDgp& d, int h) {
  double y = d.y0;
  for (int k = 0; k < d.K; ++k) y += d.gammaL(k) * ExactJoint::L_of(h, k);
  for (int j = 0; j < d.K; ++j) y += d.psiA(j) * ExactJoint::A_of(h, d.K - 1 - j);
  return y;
}

// E[Y] with treatment forced from period s on: A(k) = bit (k-s) of `forced`
// for k >= s, everything else following the generating law.
double forced_mean(const EnumerableDgp& d, int s, int forced) {
  const int K = d.K;
  double total = 0, sum = 0;
  for (int h = 0; h < (1 << (2 * K)); ++h) {
    bool match = true;
    for (int k = s; k < K && match; ++k)
      if (ExactJoint::A_of(h, k) != ((forced >> (k - s)) & 1)) match = false;
    if (!match) continue;
    double mass = 1;
    for (int k = 0; k < K; ++k) {
      int l = ExactJoint::L_of(h, k), a = ExactJoint::A_of(h, k);
      int l_prev = k > 0 ? ExactJoint::L_of(h, k - 1) : 0;
      int a_prev = k > 0 ? ExactJoint::A_of(h, k - 1) : 0;
      mass *= category(covar_prob(d, k, l_prev, a_prev), l);
      if (k < s) mass *= category(treat_prob(d, k, l, a_prev), a);
    }
    total += mass;
    sum += mass * path_outcome(d, h);
  }
  return sum / total;
}

// Conditional P[A(k)=1 | A(lo..k-1) = observed bits] for every pattern,
// summed over the joint law.
std::vector<double> prefix_conditionals(const ExactJoint& joint, int k, int lo) {
  std::vector<double> tot(std::size_t{1} << (k - lo), 0.0), one(std::size_t{1} << (k - lo), 0.0);
  for (int h = 0; h < joint.paths(); ++h) {
    int key = 0;
    for (int j = lo; j < k; ++j) key |= ExactJoint::A_of(h, j) << (j - lo);
    tot[key] += joint.mass[h];
    one[key] += joint.mass[h] * ExactJoint::A_of(h, k);
  }
  std::vector<double> p(tot.size(), kNaN);
  for (std::size_t c = 0; c < tot.size(); ++c)
    if (tot[c] > 0) p[c] = one[c] / tot[c];
  return p;
}

int window_bits_of(int h, int s, int K) {
  int bits = 0;
  for (int k = s; k < K; ++k) bits |= ExactJoint::A_of(h, k) << (k - s);
  return bits;
}

}  // namespace

ExactLimits exact_limits(const EnumerableDgp& dgp, int m) {
  const int K = dgp.K;
  if (m < 1 || m > K) throw std::invalid_argument("exact_limits: m out of [1,K]");
  const int s = K - m;
  ExactJoint joint = enumerate_dgp(dgp);

  // Treatment-history conditionals at each period: full prefix (SW/PSW
  // numerators), in-window prefix (RSW interior), and the marginal (RSW
  // window start).
  std::vector<std::vector<double>> full_cond(K), window_cond(K);
  std::vector<double> marginal(K, 0.0);
  for (int k = 0; k < K; ++k) {
    full_cond[k] = prefix_conditionals(joint, k, 0);
    if (k >= s) window_cond[k] = prefix_conditionals(joint, k, s);
    for (int h = 0; h < joint.paths(); ++h)
      marginal[k] += joint.mass[h] * ExactJoint::A_of(h, k);
  }

  double s1[3] = {0, 0, 0}, s1y[3] = {0, 0, 0}, s0[3] = {0, 0, 0}, s0y[3] = {0, 0, 0};
  enum { SW = 0, RSW = 1, PSW = 2 };
  for (int h = 0; h < joint.paths(); ++h) {
    if (joint.mass[h] == 0) continue;
    int wbits = window_bits_of(h, s, K);
    bool arm1 = wbits == (1 << m) - 1, arm0 = wbits == 0;
    if (!arm1 && !arm0) continue;
    double w[3] = {1, 1, 1};
    for (int k = 0; k < K; ++k) {
      int a = ExactJoint::A_of(h, k);
      int l = ExactJoint::L_of(h, k);
      int a_prev = k > 0 ? ExactJoint::A_of(h, k - 1) : 0;
      double den = category(treat_prob(dgp, k, l, a_prev), a);
      int full_key = 0;
      for (int j = 0; j < k; ++j) full_key |= ExactJoint::A_of(h, j) << j;
      double num_sw = category(full_cond[k][full_key], a);
      w[SW] *= num_sw / den;
      if (k >= s) {
        w[PSW] *= num_sw / den;
        double num_rsw;
        if (k == s && s > 0) {
          num_rsw = category(marginal[k], a);
        } else if (s == 0) {
          num_rsw = num_sw;
        } else {
          int win_key = 0;
          for (int j = s; j < k; ++j) win_key |= ExactJoint::A_of(h, j) << (j - s);
          num_rsw = category(window_cond[k][win_key], a);
        }
        w[RSW] *= num_rsw / den;
      }
    }
    double y = joint.ymean[h], mass = joint.mass[h];
    for (int e = 0; e < 3; ++e) {
      if (arm1) {
        s1[e] += mass * w[e];
        s1y[e] += mass * w[e] * y;
      } else {
        s0[e] += mass * w[e];
        s0y[e] += mass * w[e] * y;
      }
    }
  }

  ExactLimits lim;
  lim.m = m;
  lim.theta_sw = s1y[SW] / s1[SW] - s0y[SW] / s0[SW];
  lim.theta_rsw = s1y[RSW] / s1[RSW] - s0y[RSW] / s0[RSW];
  lim.theta_psw = s1y[PSW] / s1[PSW] - s0y[PSW] / s0[PSW];
  lim.theta_K = forced_mean(dgp, 0, (1 << K) - 1) - forced_mean(dgp, 0, 0);
  lim.theta_m = forced_mean(dgp, s, (1 << m) - 1) - forced_mean(dgp, s, 0);

  lim.q = Eigen::VectorXd::Constant(K, kNaN);
  double mass1 = 0, mass0 = 0;
  Eigen::VectorXd pre1 = Eigen::VectorXd::Zero(K), pre0 = Eigen::VectorXd::Zero(K);
  for (int h = 0; h < joint.paths(); ++h) {
    int wbits = window_bits_of(h, s, K);
    if (wbits == (1 << m) - 1) {
      mass1 += joint.mass[h];
      for (int j = m + 1; j <= K; ++j) pre1(j - 1) += joint.mass[h] * ExactJoint::A_of(h, K - j);
    } else if (wbits == 0) {
      mass0 += joint.mass[h];
      for (int j = m + 1; j <= K; ++j) pre0(j - 1) += joint.mass[h] * ExactJoint::A_of(h, K - j);
    }
  }
  for (int j = m + 1; j <= K; ++j) lim.q(j - 1) = pre1(j - 1) / mass1 - pre0(j - 1) / mass0;
  return lim;
}

MsmCoefficients msm_coefficients(const EnumerableDgp& dgp) {
  const int K = dgp.K;
  // Affine representation of E[L(k)^a]: constant plus coefficients on each
  // forced a(s), s < k, propagated through the linear covariate model.
  std::vector<double> l_const(K, 0.0);
  std::vector<Eigen::VectorXd> l_coef(K, Eigen::VectorXd::Zero(K));
  for (int k = 0; k < K; ++k) {
    if (k == 0) {
      l_const[0] = dgp.pL0;
      continue;
    }
    l_const[k] = dgp.cL(k) + dgp.eL(k) * l_const[k - 1];
    l_coef[k] = dgp.eL(k) * l_coef[k - 1];
    l_coef[k](k - 1) += dgp.dL(k);
  }
  MsmCoefficients out;
  out.intercept = dgp.y0;
  for (int k = 0; k < K; ++k) out.intercept += dgp.gammaL(k) * l_const[k];
  out.psi = Eigen::VectorXd::Zero(K);
  for (int j = 1; j <= K; ++j) {
    int sidx = K - j;
    double psi = dgp.psiA(j - 1);
    for (int k = sidx + 1; k < K; ++k) psi += dgp.gammaL(k) * l_coef[k](sidx);
    out.psi(j - 1) = psi;
  }
  return out;
}

Eigen::VectorXd regime_means(const EnumerableDgp& dgp) {
  Eigen::VectorXd means(1 << dgp.K);
  for (int r = 0; r < (1 << dgp.K); ++r) means(r) = forced_mean(dgp, 0, r);
  return means;
}

SuppliedProbs empirical_true_probs(const LongPanel& panel, const TruthRecord& truth,
                                   int rsw_window_start) {
  const int n = panel.n(), K = panel.K();
  if (truth.p_treat.rows() != n || truth.p_treat.cols() != K)
    throw std::invalid_argument("truth probabilities do not match the panel shape");
  const bool markov = panel.mode() == OutcomeMode::Survival;

  SuppliedProbs sp;
  sp.treat_den = truth.p_treat;
  sp.treat_num = Eigen::MatrixXd::Constant(n, K, kNaN);
  sp.treat_num_marginal = Eigen::MatrixXd::Constant(n, K, kNaN);

  auto cell_lo = [&](int k) {
    int lo = markov ? std::max(0, k - 1) : 0;
    if (rsw_window_start >= 0 && k >= rsw_window_start) lo = std::max(lo, rsw_window_start);
    return lo;
  };
  auto history_key = [&](int i, int lo, int hi) {  // bits of A(lo..hi-1)
    int key = 0;
    for (int j = lo; j < hi; ++j) key |= panel.A()(i, j) << (j - lo);
    return key;
  };

  for (int k = 0; k < K; ++k) {
    int lo = cell_lo(k);
    if (k - lo > 25)
      throw std::invalid_argument(
          "true-weight numerator cells: treatment history too deep to enumerate");
    std::vector<double> tot(std::size_t{1} << (k - lo), 0.0),
        one(std::size_t{1} << (k - lo), 0.0);
    double tot_all = 0, one_all = 0;
    for (int i = 0; i < n; ++i) {
      if (k >= panel.n_periods(i)) continue;
      int key = history_key(i, lo, k);
      tot[key] += 1;
      one[key] += panel.A()(i, k);
      tot_all += 1;
      one_all += panel.A()(i, k);
    }
    for (int i = 0; i < n; ++i) {
      if (k >= panel.n_periods(i)) continue;
      sp.treat_num(i, k) = one[history_key(i, lo, k)] / tot[history_key(i, lo, k)];
      sp.treat_num_marginal(i, k) = one_all / tot_all;
    }
  }

  if (panel.has_censoring()) {
    if (truth.p_cens.rows() != n || truth.p_cens.cols() != K)
      throw std::invalid_argument("truth censoring hazards do not match the panel shape");
    sp.cens_den = truth.p_cens;
    sp.cens_num = Eigen::MatrixXd::Constant(n, K, kNaN);
    sp.cens_num_start = Eigen::MatrixXd::Constant(n, K, kNaN);
    for (int k = 0; k < K; ++k) {
      int lo = cell_lo(k);
      // Cells include the current treatment A(k): the censoring hazard for
      // C(k+1) conditions on treatment through period k.
      std::vector<double> tot(std::size_t{1} << (k - lo + 1), 0.0),
          one(std::size_t{1} << (k - lo + 1), 0.0);
      double tot_a[2] = {0, 0}, one_a[2] = {0, 0};
      for (int i = 0; i < n; ++i) {
        if (k >= panel.n_periods(i)) continue;
        int key = history_key(i, lo, k + 1);
        int a = panel.A()(i, k);
        tot[key] += 1;
        one[key] += panel.C()(i, k);
        tot_a[a] += 1;
        one_a[a] += panel.C()(i, k);
      }
      for (int i = 0; i < n; ++i) {
        if (k >= panel.n_periods(i)) continue;
        int key = history_key(i, lo, k + 1);
        sp.cens_num(i, k) = one[key] / tot[key];
        sp.cens_num_start(i, k) = one_a[panel.A()(i, k)] / tot_a[panel.A()(i, k)];
      }
    }
  }
  return sp;
}

SuppliedProbs exact_probs(const EnumerableDgp& dgp, const LongPanel& panel,
                          int rsw_window_start) {
  const int n = panel.n(), K = panel.K();
  if (K != dgp.K) throw std::invalid_argument("panel and process have different K");
  if (panel.has_censoring())
    throw std::invalid_argument("enumerable processes have no censoring mechanism");
  ExactJoint joint = enumerate_dgp(dgp);

  SuppliedProbs sp;
  sp.treat_den = Eigen::MatrixXd::Constant(n, K, kNaN);
  sp.treat_num = Eigen::MatrixXd::Constant(n, K, kNaN);
  sp.treat_num_marginal = Eigen::MatrixXd::Constant(n, K, kNaN);

  for (int k = 0; k < K; ++k) {
    int lo = (rsw_window_start >= 0 && k >= rsw_window_start) ? rsw_window_start : 0;
    std::vector<double> cond = prefix_conditionals(joint, k, lo);
    double marginal = 0;
    for (int h = 0; h < joint.paths(); ++h)
      marginal += joint.mass[h] * ExactJoint::A_of(h, k);
    for (int i = 0; i < n; ++i) {
      int l = static_cast<int>(panel.L()(i, k));
      int a_prev = k > 0 ? panel.A()(i, k - 1) : 0;
      sp.treat_den(i, k) = treat_prob(dgp, k, l, a_prev);
      int key = 0;
      for (int j = lo; j < k; ++j) key |= panel.A()(i, j) << (j - lo);
      sp.treat_num(i, k) = cond[key];
      sp.treat_num_marginal(i, k) = marginal;
    }
  }
  return sp;
}

double mc_truth(const NormalDgpConfig& cfg, WeightKind kind, int m, ModelForm form, int n,
                std::uint64_t seed) {
  NormalDgpConfig c = cfg;
  c.n = n;
  c.seed = seed;
  auto [panel, truth] = generate_normal(c);
  int start = (kind == WeightKind::RSW) ? panel.K() - m : -1;
  WeightModelSpec spec = WeightModelSpec::defaults(OutcomeMode::Mean);
  spec.supplied = empirical_true_probs(panel, truth, start);
  WeightBuilder builder(panel, spec);
  WeightSet ws = builder.build(kind, m);
  return wls_estimate(panel, ws, m, form).estimate;
}

}  // namespace pmsm
