#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pmsm/panel.hpp"

namespace pmsm {

// Four-period normal-outcome process with one time-varying covariate:
//   L(0) ~ N(alpha0 + alpha1, 1)
//   A(0) ~ Bernoulli(expit(-3 + L(0)))
//   L(k) ~ N(alpha0 L(0) + alpha1 L(k-1) + alpha2 A(k-1), 1)       k=1..3
//   A(k) ~ Bernoulli(expit(-3 + L(k) + pi1 A(k-1)))                k=1..3
//   Y    ~ N(delta0 L(0) + delta1 L(3) + delta2 A(3) + delta3 A(3) L(3), 1)
struct NormalDgpConfig {
  double alpha0 = 0.0, alpha1 = 0.0, alpha2 = 1.0;
  double pi1 = 4.0;
  double delta0 = 0.0, delta1 = 1.0, delta2 = 2.0, delta3 = 1.0;
  int n = 5000;
  std::uint64_t seed = 1;
};

// Discrete-time survival process over K periods (all hazards time-constant):
//   L(k)   ~ Bernoulli(expit(-0.5 A(k-1)))                        A(-1)=0
//   A(k)   ~ Bernoulli(expit(-4 + 2 L(k) + 5 A(k-1)))
//   C(k+1) ~ Bernoulli(expit(-6.5 + 4 L(k) - 4 A(k)))
//   Y(k+1) ~ Bernoulli(expit(-6.5 + L(k) - 0.5 A(k) - 0.25 A(k-1)))
struct SurvivalDgpConfig {
  int n = 5000;
  int K = 36;
  std::uint64_t seed = 1;
};

// Ground truth attached to a simulated panel.
struct TruthRecord {
  double theta_true = 0.0;  // mean mode: theta^(K); survival: log-HR sum eta^(K)
  int m_star = 1;           // minimal sufficient treatment-history window
  // True generating probabilities per (subject, period); NaN once exited.
  Eigen::MatrixXd p_treat;  // P[A(k)=1 | realized history]
  Eigen::MatrixXd p_cens;   // P[C(k+1)=1 | realized history] (survival only)
};

std::pair<LongPanel, TruthRecord> generate_normal(const NormalDgpConfig& cfg,
                                                  std::mt19937_64& rng);
std::pair<LongPanel, TruthRecord> generate_normal(const NormalDgpConfig& cfg);

std::pair<LongPanel, TruthRecord> generate_survival(const SurvivalDgpConfig& cfg,
                                                    std::mt19937_64& rng);
std::pair<LongPanel, TruthRecord> generate_survival(const SurvivalDgpConfig& cfg);

// Named presets: "s1" (saturated-model truth), "s2" (main-effect truth),
// "s3" (main-effect truth with a baseline covariate opening a backdoor to
// early treatments). theta^(K) is 4, 3, 3 respectively and m* = 2.
NormalDgpConfig scenario_config(const std::string& name);

// --- Exactly enumerable processes (oracle substrate) ----------------------
//
// Binary covariate, K <= 3, so the joint law of (L(0),A(0),...,L(K-1),A(K-1))
// enumerates in at most 4^K paths. Conditionals are first-order:
//   P[L(0)=1] = pL0
//   P[L(k)=1 | L(k-1)=l, A(k-1)=a] = cL[k] + eL[k] l + dL[k] a   (in [0,1])
//   P[A(k)=1 | L(k)=l, A(k-1)=a]   = expit(gA[k] + hA[k] l + rA[k] a)
//   E[Y | path] = y0 + sum_k gammaL[k] L(k) + sum_j psiA[j] A(K-1-j)
// The additive L-model (no l*a interaction) keeps the marginal structural
// model exactly linear in treatment history, which is what the closed-form
// identities in the tests require.
struct EnumerableDgp {
  int K = 2;
  double pL0 = 0.5;
  Eigen::VectorXd cL, eL, dL;      // size K (entry 0 unused)
  Eigen::VectorXd gA, hA, rA;      // size K (rA[0] unused)
  double y0 = 0.0;
  Eigen::VectorXd gammaL;          // size K: direct L(k) -> Y effects
  Eigen::VectorXd psiA;            // size K: psiA[j] multiplies A(K-1-j) (lag j)
};

// Full joint law: mass and outcome mean per path. Path bits: L(k) at bit 2k,
// A(k) at bit 2k+1.
struct ExactJoint {
  int K = 0;
  std::vector<double> mass;
  std::vector<double> ymean;

  int paths() const { return static_cast<int>(mass.size()); }
  static int L_of(int path, int k) { return (path >> (2 * k)) & 1; }
  static int A_of(int path, int k) { return (path >> (2 * k + 1)) & 1; }
};

// Enumerates the joint law; throws on (A3) positivity violations
// (deterministic treatment assignment) and out-of-range L-probabilities.
ExactJoint enumerate_dgp(const EnumerableDgp& dgp);

// Draws an i.i.d. panel of size n from the enumerable law (used to cross
// check estimators against exact population limits).
LongPanel sample_enumerable(const EnumerableDgp& dgp, int n, std::mt19937_64& rng);

}  // namespace pmsm
