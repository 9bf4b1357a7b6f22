#include "pmsm/dgp.hpp"

#include <cmath>
#include <stdexcept>

#include "pmsm/glm.hpp"
#include "pmsm/rng.hpp"

namespace pmsm {

namespace {

// Effect of the treatment path on E[L(3)] under the normal process:
// E[L3^a] = c + lam1 a(2) + lam2 a(1) + lam3 a(0).
struct L3Effects {
  double c = 0, lam1 = 0, lam2 = 0, lam3 = 0;
};

L3Effects l3_effects(const NormalDgpConfig& g) {
  double mu0 = g.alpha0 + g.alpha1;
  double e1 = (g.alpha0 + g.alpha1) * mu0;  // E[L1^a] constant part
  double e2 = g.alpha0 * mu0 + g.alpha1 * e1;
  double e3 = g.alpha0 * mu0 + g.alpha1 * e2;
  L3Effects out;
  out.c = e3;
  out.lam1 = g.alpha2;
  out.lam2 = g.alpha1 * g.alpha2;
  out.lam3 = g.alpha1 * g.alpha1 * g.alpha2;
  return out;
}

}  // namespace

std::pair<LongPanel, TruthRecord> generate_normal(const NormalDgpConfig& cfg,
                                                  std::mt19937_64& rng) {
  const int K = 4, q = 1, n = cfg.n;
  if (n < 1) throw std::invalid_argument("generate_normal: n must be positive");
  LongPanel p(n, K, q, OutcomeMode::Mean, /*has_censoring=*/false);
  TruthRecord truth;
  truth.p_treat = Eigen::MatrixXd::Constant(n, K, std::numeric_limits<double>::quiet_NaN());

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    double L0 = cfg.alpha0 + cfg.alpha1 + gauss(rng);
    double Lprev = L0;
    int Aprev = 0;
    for (int k = 0; k < K; ++k) {
      double Lk = (k == 0) ? L0
                           : cfg.alpha0 * L0 + cfg.alpha1 * Lprev + cfg.alpha2 * Aprev + gauss(rng);
      double pa = expit(-3.0 + Lk + (k == 0 ? 0.0 : cfg.pi1 * Aprev));
      int Ak = unif(rng) < pa ? 1 : 0;
      p.L()(i, k) = Lk;
      p.A()(i, k) = Ak;
      truth.p_treat(i, k) = pa;
      Lprev = Lk;
      Aprev = Ak;
    }
    double L3 = Lprev;
    int A3 = Aprev;
    p.Y()(i) = cfg.delta0 * L0 + cfg.delta1 * L3 + cfg.delta2 * A3 + cfg.delta3 * A3 * L3 +
               gauss(rng);
  }

  L3Effects eff = l3_effects(cfg);
  double lam_sum = eff.lam1 + eff.lam2 + eff.lam3;
  truth.theta_true = cfg.delta1 * lam_sum + cfg.delta2 + cfg.delta3 * (eff.c + lam_sum);
  int depth = 1;
  auto nonzero = [](double x) { return std::abs(x) > 1e-12; };
  if (nonzero(cfg.delta1 * eff.lam1) || nonzero(cfg.delta3 * eff.lam1)) depth = std::max(depth, 2);
  if (nonzero(cfg.delta1 * eff.lam2) || nonzero(cfg.delta3 * eff.lam2)) depth = std::max(depth, 3);
  if (nonzero(cfg.delta1 * eff.lam3) || nonzero(cfg.delta3 * eff.lam3)) depth = std::max(depth, 4);
  truth.m_star = depth;
  return {std::move(p), std::move(truth)};
}

std::pair<LongPanel, TruthRecord> generate_normal(const NormalDgpConfig& cfg) {
  std::mt19937_64 rng = make_stream(cfg.seed, 0);
  return generate_normal(cfg, rng);
}

std::pair<LongPanel, TruthRecord> generate_survival(const SurvivalDgpConfig& cfg,
                                                    std::mt19937_64& rng) {
  const int K = cfg.K, q = 1, n = cfg.n;
  if (n < 1 || K < 2) throw std::invalid_argument("generate_survival: need n >= 1, K >= 2");
  LongPanel p(n, K, q, OutcomeMode::Survival, /*has_censoring=*/true);
  TruthRecord truth;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  truth.p_treat = Eigen::MatrixXd::Constant(n, K, nan);
  truth.p_cens = Eigen::MatrixXd::Constant(n, K, nan);
  // The marginal structural hazard ratio exp(-0.5 a(t-1) - 0.37 a(t-2))
  // attenuates the direct -0.25 lag-2 coefficient through the L pathway.
  truth.theta_true = -0.87;
  truth.m_star = 2;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    int Aprev = 0;
    for (int k = 0; k < K; ++k) {
      double pl = expit(-0.5 * Aprev);
      int Lk = unif(rng) < pl ? 1 : 0;
      double pa = expit(-4.0 + 2.0 * Lk + 5.0 * Aprev);
      int Ak = unif(rng) < pa ? 1 : 0;
      double pc = expit(-6.5 + 4.0 * Lk - 4.0 * Ak);
      int Ck1 = unif(rng) < pc ? 1 : 0;
      p.L()(i, k) = Lk;
      p.A()(i, k) = Ak;
      p.C()(i, k) = Ck1;
      truth.p_treat(i, k) = pa;
      truth.p_cens(i, k) = pc;
      if (Ck1 == 1) break;  // Y(k+1) unobserved
      double py = expit(-6.5 + Lk - 0.5 * Ak - 0.25 * Aprev);
      int Yk1 = unif(rng) < py ? 1 : 0;
      p.Yt()(i, k) = Yk1;
      if (Yk1 == 1) break;
      Aprev = Ak;
    }
  }
  return {std::move(p), std::move(truth)};
}

std::pair<LongPanel, TruthRecord> generate_survival(const SurvivalDgpConfig& cfg) {
  std::mt19937_64 rng = make_stream(cfg.seed, 0);
  return generate_survival(cfg, rng);
}

NormalDgpConfig scenario_config(const std::string& name) {
  NormalDgpConfig cfg;
  if (name == "s1") {
    cfg.alpha0 = 0;
    cfg.alpha1 = 0;
    cfg.alpha2 = 1;
    cfg.pi1 = 4;
    cfg.delta0 = 0;
    cfg.delta1 = 1;
    cfg.delta2 = 2;
    cfg.delta3 = 1;
  } else if (name == "s2") {
    cfg.alpha0 = 0;
    cfg.alpha1 = 0;
    cfg.alpha2 = 1;
    cfg.pi1 = 4;
    cfg.delta0 = 0;
    cfg.delta1 = 1;
    cfg.delta2 = 2;
    cfg.delta3 = 0;
  } else if (name == "s3") {
    cfg.alpha0 = 0.5;
    cfg.alpha1 = 0;
    cfg.alpha2 = 1;
    cfg.pi1 = 4;
    cfg.delta0 = 0.5;
    cfg.delta1 = 1;
    cfg.delta2 = 2;
    cfg.delta3 = 0;
  } else {
    throw std::invalid_argument("unknown scenario: " + name);
  }
  return cfg;
}

ExactJoint enumerate_dgp(const EnumerableDgp& g) {
  if (g.K < 1 || g.K > 3) throw std::invalid_argument("enumerable dgp requires 1 <= K <= 3");
  auto check_sizes = [&](const Eigen::VectorXd& v, const char* name) {
    if (v.size() != g.K) throw std::invalid_argument(std::string("enumerable dgp: bad size for ") + name);
  };
  check_sizes(g.cL, "cL");
  check_sizes(g.eL, "eL");
  check_sizes(g.dL, "dL");
  check_sizes(g.gA, "gA");
  check_sizes(g.hA, "hA");
  check_sizes(g.rA, "rA");
  check_sizes(g.gammaL, "gammaL");
  check_sizes(g.psiA, "psiA");
  if (g.pL0 <= 0 || g.pL0 >= 1) throw std::invalid_argument("enumerable dgp: pL0 must be in (0,1)");

  auto pL = [&](int k, int l_prev, int a_prev) {
    double v = g.cL(k) + g.eL(k) * l_prev + g.dL(k) * a_prev;
    if (v < 0 || v > 1)
      throw std::invalid_argument("enumerable dgp: covariate probability outside [0,1]");
    return v;
  };
  auto pA = [&](int k, int l, int a_prev) {
    double v = expit(g.gA(k) + g.hA(k) * l + (k == 0 ? 0.0 : g.rA(k) * a_prev));
    if (v <= 1e-12 || v >= 1 - 1e-12)
      throw std::invalid_argument(
          "(A3) positivity violated: treatment assignment is (numerically) deterministic");
    return v;
  };

  const int P = 1 << (2 * g.K);
  ExactJoint joint;
  joint.K = g.K;
  joint.mass.assign(P, 0.0);
  joint.ymean.assign(P, 0.0);
  for (int path = 0; path < P; ++path) {
    double mass = 1.0;
    int l_prev = 0, a_prev = 0;
    for (int k = 0; k < g.K; ++k) {
      int l = ExactJoint::L_of(path, k);
      int a = ExactJoint::A_of(path, k);
      double pl = (k == 0) ? (l ? g.pL0 : 1 - g.pL0)
                           : (l ? pL(k, l_prev, a_prev) : 1 - pL(k, l_prev, a_prev));
      double pa = a ? pA(k, l, a_prev) : 1 - pA(k, l, a_prev);
      mass *= pl * pa;
      l_prev = l;
      a_prev = a;
    }
    double y = g.y0;
    for (int k = 0; k < g.K; ++k) y += g.gammaL(k) * ExactJoint::L_of(path, k);
    for (int j = 0; j < g.K; ++j) y += g.psiA(j) * ExactJoint::A_of(path, g.K - 1 - j);
    joint.mass[path] = mass;
    joint.ymean[path] = y;
  }
  return joint;
}

LongPanel sample_enumerable(const EnumerableDgp& g, int n, std::mt19937_64& rng) {
  ExactJoint joint = enumerate_dgp(g);  // also validates g
  LongPanel p(n, g.K, 1, OutcomeMode::Mean, false);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    int l_prev = 0, a_prev = 0;
    int path = 0;
    for (int k = 0; k < g.K; ++k) {
      double pl = (k == 0) ? g.pL0 : g.cL(k) + g.eL(k) * l_prev + g.dL(k) * a_prev;
      int l = unif(rng) < pl ? 1 : 0;
      double pa = expit(g.gA(k) + g.hA(k) * l + (k == 0 ? 0.0 : g.rA(k) * a_prev));
      int a = unif(rng) < pa ? 1 : 0;
      p.L()(i, k) = l;
      p.A()(i, k) = a;
      path |= (l << (2 * k)) | (a << (2 * k + 1));
      l_prev = l;
      a_prev = a;
    }
    p.Y()(i) = joint.ymean[path];  // noise-free outcome: limits hit exactly
  }
  return p;
}

}  // namespace pmsm
