#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmsm {

struct FitDiagnostics {
  bool converged = false;
  int iterations = 0;
  double max_abs_gradient = std::numeric_limits<double>::quiet_NaN();
  double max_abs_coefficient = std::numeric_limits<double>::quiet_NaN();
  std::string note;
};

// Thrown on separation, rank deficiency, or failure to converge. Never
// swallowed: callers that can tolerate a failed fit must catch explicitly.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, FitDiagnostics diag)
      : std::runtime_error(what), diagnostics(diag) {}
  FitDiagnostics diagnostics;
};

struct FitOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;  // max-norm of the score at the optimum
};

// A fitted model with the pieces sandwich-variance consumers need.
//   beta  : coefficients.
//   bread : inverse curvature, (X' W_irls X)^{-1} (logistic), (X'WX)^{-1}
//           (WLS), observed information inverse (Cox).
//   score : per-unit score contributions; rows sum to ~0 at the optimum.
//           Per observation for logistic/WLS, per subject for Cox.
struct GlmFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd bread;
  Eigen::MatrixXd score;
  FitDiagnostics diagnostics;
};

// Weighted logistic regression by Newton/IRLS with step halving.
GlmFit fit_weighted_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w, const FitOptions& opts = {});

// Weighted least squares, direct normal-equations solve with one step of
// iterative refinement.
GlmFit fit_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w);

// Person-period input for the discrete-time weighted Cox fit. One row per
// (subject, time) at risk; `event` flags rows where the event occurs.
struct CoxData {
  std::vector<int> subject;  // 0-based subject ids
  std::vector<int> time;     // discrete event times
  std::vector<char> event;
  Eigen::MatrixXd x;         // row covariates
  Eigen::VectorXd weight;    // W_i(t)
  int n_subjects = 0;

  int rows() const { return static_cast<int>(subject.size()); }
};

// Weighted Cox partial likelihood on discrete times, Breslow tie handling.
// The score matrix holds per-subject robust score residuals.
GlmFit fit_weighted_cox(const CoxData& data, const FitOptions& opts = {});

// Numerically stable logistic function.
inline double expit(double eta) {
  if (eta >= 0) {
    double e = std::exp(-eta);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(eta);
  return e / (1.0 + e);
}

// Log-likelihood pieces exposed for gradient checks in tests.
double weighted_logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& w, const Eigen::VectorXd& beta);
double cox_breslow_loglik(const CoxData& data, const Eigen::VectorXd& beta);

}  // namespace pmsm
