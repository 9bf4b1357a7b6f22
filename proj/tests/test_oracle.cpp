#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <vector>

#include "pmsm/dgp.hpp"
#include "pmsm/glm.hpp"
#include "pmsm/oracle.hpp"
#include "pmsm/rng.hpp"

using Eigen::VectorXd;
using namespace pmsm;

namespace {

// Draws a well-behaved random process: covariate probabilities stay inside
// [0.04, 0.85] by construction, treatment assignment stays away from 0/1.
EnumerableDgp random_dgp(std::mt19937_64& rng, int K, bool nonneg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  EnumerableDgp g;
  g.K = K;
  g.pL0 = in(0.25, 0.75);
  g.cL = g.eL = g.dL = g.gA = g.hA = g.rA = g.gammaL = g.psiA = VectorXd::Zero(K);
  for (int k = 0; k < K; ++k) {
    g.cL(k) = in(0.2, 0.45);
    g.eL(k) = nonneg ? in(0.0, 0.2) : in(-0.08, 0.2);
    g.dL(k) = nonneg ? in(0.0, 0.2) : in(-0.08, 0.2);
    g.gA(k) = in(-0.8, 0.8);
    g.hA(k) = nonneg ? in(0.0, 1.0) : in(-1.0, 1.0);
    g.rA(k) = nonneg ? in(0.0, 1.0) : in(-1.0, 1.0);
    g.gammaL(k) = nonneg ? in(0.0, 1.0) : in(-1.0, 1.0);
    g.psiA(k) = nonneg ? in(0.1, 1.0) : in(-1.0, 1.0);
  }
  g.y0 = in(-1.0, 1.0);
  return g;
}

void check_window_identities(const EnumerableDgp& g) {
  const int K = g.K;
  MsmCoefficients mc = msm_coefficients(g);
  VectorXd rm = regime_means(g);

  // Every regime mean is exactly linear in the forced treatments.
  for (int r = 0; r < (1 << K); ++r) {
    double lin = mc.intercept;
    for (int j = 1; j <= K; ++j) lin += mc.psi(j - 1) * ((r >> (K - j)) & 1);
    CHECK(std::abs(rm(r) - lin) < 1e-10);
  }

  for (int m = 1; m <= K; ++m) {
    ExactLimits el = exact_limits(g, m);
    double head = mc.psi.head(m).sum();
    double tail = 0;
    for (int j = m + 1; j <= K; ++j) tail += mc.psi(j - 1) * el.q(j - 1);

    // Restricted weighting recovers the window contrast; the g-formula route
    // (theta_m) agrees even though it never touches a weight.
    CHECK(std::abs(el.theta_rsw - head) < 1e-10);
    CHECK(std::abs(el.theta_m - el.theta_rsw) < 1e-10);
    // Standard weighting keeps the pre-window association terms.
    CHECK(std::abs(el.theta_sw - head - tail) < 1e-10);
    // Full-window everything coincides.
    if (m == K) {
      CHECK(std::abs(el.theta_sw - el.theta_rsw) < 1e-13);
      CHECK(std::abs(el.theta_sw - el.theta_psw) < 1e-13);
      CHECK(std::abs(el.theta_sw - el.theta_K) < 1e-10);
    }
    // Three independent routes to the all-period contrast.
    CHECK(std::abs(el.theta_K - mc.psi.sum()) < 1e-10);
    CHECK(std::abs(el.theta_K - (rm((1 << K) - 1) - rm(0))) < 1e-10);
  }
}

}  // namespace

TEST_CASE("window limits satisfy the closed-form identities on random processes") {
  std::mt19937_64 rng = make_stream(101, 0);
  for (int rep = 0; rep < 12; ++rep) check_window_identities(random_dgp(rng, 2, false));
  for (int rep = 0; rep < 12; ++rep) check_window_identities(random_dgp(rng, 3, false));
}

TEST_CASE("partial weighting is exact when the outcome ignores the covariates") {
  std::mt19937_64 rng = make_stream(102, 0);
  for (int rep = 0; rep < 6; ++rep) {
    for (int K : {2, 3}) {
      EnumerableDgp g = random_dgp(rng, K, false);
      g.gammaL = VectorXd::Zero(K);
      for (int m = 1; m <= K; ++m) {
        ExactLimits el = exact_limits(g, m);
        CHECK(std::abs(el.theta_psw - el.theta_sw) < 1e-10);
      }
    }
  }
}

TEST_CASE("partial weighting is exact when assignment ignores the covariates") {
  std::mt19937_64 rng = make_stream(103, 0);
  for (int rep = 0; rep < 4; ++rep) {
    for (int K : {2, 3}) {
      EnumerableDgp g = random_dgp(rng, K, false);
      g.hA = VectorXd::Zero(K);
      for (int m = 1; m <= K; ++m) {
        ExactLimits el = exact_limits(g, m);
        CHECK(std::abs(el.theta_psw - el.theta_sw) < 1e-10);
      }
    }
  }
}

TEST_CASE("partial weighting is biased when covariates confound across the window") {
  EnumerableDgp g;
  g.K = 2;
  g.pL0 = 0.5;
  g.cL = VectorXd::Constant(2, 0.4);
  g.eL = VectorXd::Constant(2, 0.15);
  g.dL = VectorXd::Constant(2, 0.3);
  g.gA = VectorXd::Constant(2, 0.0);
  g.hA = VectorXd::Constant(2, 1.5);
  g.rA = VectorXd::Constant(2, 0.5);
  g.gammaL = VectorXd::Zero(2);
  g.gammaL(0) = 1.2;
  g.gammaL(1) = 0.8;
  g.psiA = VectorXd::Zero(2);
  g.psiA(0) = 1.0;
  g.psiA(1) = 0.5;
  ExactLimits el = exact_limits(g, 1);
  CHECK(std::abs(el.theta_psw - el.theta_sw) > 1e-3);
  // The restricted and standard limits remain pinned by the identities.
  MsmCoefficients mc = msm_coefficients(g);
  CHECK(std::abs(el.theta_rsw - mc.psi(0)) < 1e-10);
}

TEST_CASE("nonnegative couplings order the limits") {
  std::mt19937_64 rng = make_stream(104, 0);
  for (int rep = 0; rep < 8; ++rep) {
    EnumerableDgp g = random_dgp(rng, 3, true);
    double prev_rsw = -1e300;
    for (int m = 1; m <= 3; ++m) {
      ExactLimits el = exact_limits(g, m);
      for (int j = m + 1; j <= 3; ++j) CHECK(el.q(j - 1) > -1e-12);
      CHECK(el.theta_rsw <= el.theta_sw + 1e-10);
      CHECK(el.theta_sw <= el.theta_K + 1e-10);
      CHECK(el.theta_rsw >= prev_rsw - 1e-10);
      prev_rsw = el.theta_rsw;
    }
  }
}

TEST_CASE("empirical numerator cells match hand-computed means (mean mode)") {
  LongPanel p(4, 2, 1, OutcomeMode::Mean, false);
  int A[4][2] = {{0, 1}, {0, 0}, {1, 1}, {0, 1}};
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 2; ++k) {
      p.A()(i, k) = A[i][k];
      p.L()(i, k) = 0.1 * i + k;
    }
  p.Y() << 1.0, 2.0, 3.0, 4.0;
  TruthRecord truth;
  truth.p_treat = Eigen::MatrixXd::Constant(4, 2, 0.3);

  SuppliedProbs sp = empirical_true_probs(p, truth);
  CHECK(sp.treat_den == truth.p_treat);
  for (int i = 0; i < 4; ++i) {
    CHECK(sp.treat_num(i, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sp.treat_num_marginal(i, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sp.treat_num_marginal(i, 1) == doctest::Approx(0.75).epsilon(1e-12));
  }
  // Full-history cells at k=1: subjects with A(0)=0 share a cell.
  CHECK(sp.treat_num(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(sp.treat_num(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(sp.treat_num(3, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(sp.treat_num(2, 1) == doctest::Approx(1.0).epsilon(1e-12));

  // A window starting at 1 erases the k=1 conditioning set.
  SuppliedProbs spw = empirical_true_probs(p, truth, 1);
  for (int i = 0; i < 4; ++i) {
    CHECK(spw.treat_num(i, 1) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(spw.treat_num(i, 0) == doctest::Approx(0.25).epsilon(1e-12));
  }

  TruthRecord bad;
  bad.p_treat = Eigen::MatrixXd::Constant(3, 2, 0.3);
  CHECK_THROWS_AS(empirical_true_probs(p, bad), std::invalid_argument);
}

TEST_CASE("empirical numerator cells match hand-computed means (survival mode)") {
  LongPanel p(5, 3, 1, OutcomeMode::Survival, true);
  auto fill = [&](int i, std::vector<int> a, std::vector<int> c, std::vector<int> y) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      p.L()(i, k) = 0.0;
      p.A()(i, k) = a[k];
      p.C()(i, k) = c[k];
      if (k < y.size()) p.Yt()(i, k) = y[k];
    }
  };
  fill(0, {1, 0, 1}, {0, 0, 0}, {0, 0, 0});
  fill(1, {0}, {1}, {});            // censored at C(1)
  fill(2, {1, 1}, {0, 0}, {0, 1});  // event at Y(2)
  fill(3, {0, 0, 0}, {0, 0, 0}, {0, 0, 0});
  fill(4, {1, 0, 0}, {0, 0, 0}, {0, 0, 1});
  REQUIRE(validate(p).empty());

  TruthRecord truth;
  truth.p_treat = Eigen::MatrixXd::Constant(5, 3, 0.4);
  truth.p_cens = Eigen::MatrixXd::Constant(5, 3, 0.1);
  SuppliedProbs sp = empirical_true_probs(p, truth);

  // k=0: all five at risk, marginal cell.
  for (int i = 0; i < 5; ++i) CHECK(sp.treat_num(i, 0) == doctest::Approx(0.6).epsilon(1e-12));
  // k=1: at risk {0,2,3,4}; lag-1 cells on A(0).
  CHECK(sp.treat_num(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));  // A(0)=1: {0,2,4}
  CHECK(sp.treat_num(2, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(sp.treat_num(4, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(sp.treat_num(3, 1) == doctest::Approx(0.0).epsilon(1e-12));  // A(0)=0: {3}
  CHECK(std::isnan(sp.treat_num(1, 1)));                             // exited
  CHECK(sp.treat_num_marginal(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  // k=2: at risk {0,3,4}; all share the A(1)=0 cell.
  for (int i : {0, 3, 4})
    CHECK(sp.treat_num(i, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Censoring cells condition on treatment through k: at k=0 the A(0)=0 cell
  // holds {1,3} with one censoring event.
  CHECK(sp.cens_num(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sp.cens_num(3, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sp.cens_num(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sp.cens_num_start(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sp.cens_den == truth.p_cens);
}

TEST_CASE("exact supplied probabilities reproduce the joint-law conditionals") {
  std::mt19937_64 rng = make_stream(105, 0);
  EnumerableDgp g = random_dgp(rng, 3, false);
  ExactJoint joint = enumerate_dgp(g);
  std::mt19937_64 rng2 = make_stream(106, 0);
  LongPanel p = sample_enumerable(g, 200, rng2);

  for (int start : {-1, 1}) {
    SuppliedProbs sp = exact_probs(g, p, start);
    for (int i = 0; i < p.n(); ++i) {
      for (int k = 0; k < 3; ++k) {
        int l = static_cast<int>(p.L()(i, k));
        int aprev = k > 0 ? p.A()(i, k - 1) : 0;
        double den = expit(g.gA(k) + g.hA(k) * l + (k == 0 ? 0.0 : g.rA(k) * aprev));
        CHECK(sp.treat_den(i, k) == doctest::Approx(den).epsilon(1e-12));

        int lo = (start >= 0 && k >= start) ? start : 0;
        double num = 0, tot = 0, marg = 0;
        for (int h = 0; h < joint.paths(); ++h) {
          bool match = true;
          for (int j = lo; j < k; ++j)
            if (ExactJoint::A_of(h, j) != p.A()(i, j)) match = false;
          if (match) {
            tot += joint.mass[h];
            num += joint.mass[h] * ExactJoint::A_of(h, k);
          }
          marg += joint.mass[h] * ExactJoint::A_of(h, k);
        }
        CHECK(sp.treat_num(i, k) == doctest::Approx(num / tot).epsilon(1e-12));
        CHECK(sp.treat_num_marginal(i, k) == doctest::Approx(marg).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("large-sample limits of the weighted estimators hit the known values") {
  const int n = 200000;
  // Saturated truth scenario: every weighting is consistent for the window-2
  // contrast, which equals the full contrast because deeper lags are null.
  NormalDgpConfig s1 = scenario_config("s1");
  CHECK(mc_truth(s1, WeightKind::SW, 2, ModelForm::Saturated, n, 401) ==
        doctest::Approx(4.0).epsilon(0.025));
  // Backdoor scenario: standard and restricted weights stay centered, the
  // partial weights shift by the known ~0.41.
  NormalDgpConfig s3 = scenario_config("s3");
  CHECK(mc_truth(s3, WeightKind::SW, 2, ModelForm::MainEffect, n, 402) ==
        doctest::Approx(3.0).epsilon(0.033));
  CHECK(mc_truth(s3, WeightKind::RSW, 2, ModelForm::MainEffect, n, 403) ==
        doctest::Approx(3.0).epsilon(0.033));
  double psw = mc_truth(s3, WeightKind::PSW, 2, ModelForm::MainEffect, n, 404);
  CHECK(psw > 3.29);
  CHECK(psw < 3.53);
}
