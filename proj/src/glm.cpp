#include "pmsm/glm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace pmsm {

namespace {

// log(1 + exp(eta)) without overflow.
double softplus(double eta) {
  if (eta > 35) return eta;
  if (eta < -35) return std::exp(eta);
  return std::log1p(std::exp(eta));
}

// Solve H d = g. Cholesky first; rank-revealing QR as fallback. Throws
// FitError when H is rank deficient beyond rescue.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                          const FitDiagnostics& diag) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() == Eigen::Success) {
    Eigen::VectorXd d = ldlt.solve(g);
    if (d.allFinite()) {
      // Guard against a silently-singular LDLT: verify the residual. The
      // scale must track |g| itself, or a near-zero gradient would accept
      // arbitrarily wrong steps and stall Newton short of the tolerance.
      double resid = (H * d - g).cwiseAbs().maxCoeff();
      double scale = std::max(g.cwiseAbs().maxCoeff(), 1e-30);
      if (resid <= 1e-6 * scale) return d;
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
  qr.setThreshold(1e-12);
  if (qr.rank() < H.cols())
    throw FitError("design matrix is rank deficient (curvature not invertible)", diag);
  Eigen::VectorXd d = qr.solve(g);
  if (!d.allFinite()) throw FitError("non-finite Newton step", diag);
  return d;
}

Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& H, const FitDiagnostics& diag) {
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(H.rows(), H.cols());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() == Eigen::Success) {
    Eigen::MatrixXd inv = ldlt.solve(I);
    if (inv.allFinite()) {
      double resid = (H * inv - I).cwiseAbs().maxCoeff();
      if (resid <= 1e-6) return inv;
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
  qr.setThreshold(1e-12);
  if (qr.rank() < H.cols())
    throw FitError("curvature matrix is singular", diag);
  return qr.solve(I);
}

}  // namespace

double weighted_logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  double ll = 0.0;
  Eigen::VectorXd eta = X * beta;
  for (int i = 0; i < X.rows(); ++i) ll += w(i) * (y(i) * eta(i) - softplus(eta(i)));
  return ll;
}

GlmFit fit_weighted_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w, const FitOptions& opts) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (y.size() != n || w.size() != n) throw std::invalid_argument("fit_weighted_logistic: size mismatch");
  if (n == 0 || p == 0) throw std::invalid_argument("fit_weighted_logistic: empty problem");
  for (int i = 0; i < n; ++i) {
    if (w(i) < 0 || !std::isfinite(w(i))) throw std::invalid_argument("fit_weighted_logistic: bad weight");
    if (y(i) != 0.0 && y(i) != 1.0) throw std::invalid_argument("fit_weighted_logistic: outcome not binary");
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = weighted_logistic_loglik(X, y, w, beta);
  FitDiagnostics diag;

  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd prob(n), irls_w(n);
    for (int i = 0; i < n; ++i) {
      prob(i) = expit(eta(i));
      irls_w(i) = w(i) * prob(i) * (1.0 - prob(i));
    }
    Eigen::VectorXd grad = X.transpose() * (w.array() * (y - prob).array()).matrix();
    diag.iterations = iter;
    diag.max_abs_gradient = grad.cwiseAbs().maxCoeff();
    diag.max_abs_coefficient = beta.cwiseAbs().maxCoeff();
    if (diag.max_abs_gradient <= opts.gradient_tolerance) {
      // A zero gradient with every (positively weighted) outcome classified
      // perfectly means the likelihood is maximized only in the limit: the
      // data are completely separated and the MLE does not exist.
      bool any = false, perfect = true;
      for (int i = 0; i < n && perfect; ++i) {
        if (w(i) <= 0) continue;
        any = true;
        if (std::abs(y(i) - prob(i)) > 1e-6) perfect = false;
      }
      if (any && perfect) {
        diag.note = "all outcomes perfectly classified; data separated";
        throw FitError("logistic fit separated (the MLE does not exist)", diag);
      }
      diag.converged = true;
      GlmFit fit;
      fit.beta = beta;
      Eigen::MatrixXd H = X.transpose() * irls_w.asDiagonal() * X;
      fit.bread = invert_spd(H, diag);
      fit.score.resize(n, p);
      for (int i = 0; i < n; ++i) fit.score.row(i) = w(i) * (y(i) - prob(i)) * X.row(i);
      fit.diagnostics = diag;
      return fit;
    }

    Eigen::MatrixXd H = X.transpose() * irls_w.asDiagonal() * X;
    Eigen::VectorXd step = solve_spd(H, grad, diag);
    double scale = 1.0;
    bool improved = false;
    // Monotonicity can only be checked down to the likelihood's evaluation
    // noise: summing n terms leaves roundoff up to ~n*eps*|ll|. A tighter
    // slack rejects near-optimal steps on noise and stalls the iteration.
    double noise = std::max(2.3e-16 * n * (1.0 + std::abs(ll)), 1e-14);
    for (int h = 0; h < 40; ++h) {
      Eigen::VectorXd cand = beta + scale * step;
      double cand_ll = weighted_logistic_loglik(X, y, w, cand);
      if (std::isfinite(cand_ll) && cand_ll >= ll - noise) {
        beta = cand;
        ll = cand_ll;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      diag.note = "step halving exhausted";
      throw FitError("logistic fit failed to improve the likelihood", diag);
    }
    if (beta.cwiseAbs().maxCoeff() > 40) {
      diag.note = "coefficients diverging; data likely separated";
      diag.max_abs_coefficient = beta.cwiseAbs().maxCoeff();
      throw FitError("logistic fit diverged (possible separation)", diag);
    }
  }
  diag.note = "no convergence within iteration limit";
  throw FitError("logistic fit did not converge", diag);
}

GlmFit fit_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (y.size() != n || w.size() != n) throw std::invalid_argument("fit_wls: size mismatch");
  if (n == 0 || p == 0) throw std::invalid_argument("fit_wls: empty problem");
  for (int i = 0; i < n; ++i)
    if (w(i) < 0 || !std::isfinite(w(i))) throw std::invalid_argument("fit_wls: bad weight");

  FitDiagnostics diag;
  Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
  Eigen::MatrixXd H = XtW * X;
  Eigen::VectorXd beta = solve_spd(H, XtW * y, diag);
  // One round of iterative refinement keeps the normal-equation residual at
  // solver precision even for moderately conditioned designs.
  beta += solve_spd(H, XtW * (y - X * beta), diag);

  GlmFit fit;
  fit.beta = beta;
  fit.bread = invert_spd(H, diag);
  fit.score.resize(n, p);
  Eigen::VectorXd resid = y - X * beta;
  for (int i = 0; i < n; ++i) fit.score.row(i) = w(i) * resid(i) * X.row(i);
  diag.converged = true;
  diag.iterations = 1;
  diag.max_abs_gradient = (XtW * resid).cwiseAbs().maxCoeff();
  diag.max_abs_coefficient = beta.cwiseAbs().maxCoeff();
  fit.diagnostics = diag;
  return fit;
}

namespace {

// Risk-set bookkeeping shared by the Cox likelihood, score and fit.
struct CoxGroups {
  std::vector<int> order;              // row indices sorted by time
  std::vector<std::pair<int, int>> spans;  // [begin,end) into `order` per distinct time
  std::vector<double> event_weight;    // weighted event count per distinct time
};

CoxGroups group_by_time(const CoxData& d) {
  CoxGroups g;
  g.order.resize(d.rows());
  std::iota(g.order.begin(), g.order.end(), 0);
  std::stable_sort(g.order.begin(), g.order.end(),
                   [&](int a, int b) { return d.time[a] < d.time[b]; });
  int begin = 0;
  while (begin < d.rows()) {
    int end = begin;
    int t = d.time[g.order[begin]];
    double dw = 0.0;
    while (end < d.rows() && d.time[g.order[end]] == t) {
      int r = g.order[end];
      if (d.event[r]) dw += d.weight(r);
      ++end;
    }
    g.spans.push_back({begin, end});
    g.event_weight.push_back(dw);
    begin = end;
  }
  return g;
}

}  // namespace

double cox_breslow_loglik(const CoxData& d, const Eigen::VectorXd& beta) {
  CoxGroups g = group_by_time(d);
  Eigen::VectorXd eta = d.x * beta;
  double ll = 0.0;
  for (std::size_t s = 0; s < g.spans.size(); ++s) {
    double S0 = 0.0, event_term = 0.0;
    for (int ix = g.spans[s].first; ix < g.spans[s].second; ++ix) {
      int r = g.order[ix];
      double rel = d.weight(r) * std::exp(eta(r));
      if (!std::isfinite(rel)) return -std::numeric_limits<double>::infinity();
      S0 += rel;
      if (d.event[r]) event_term += d.weight(r) * eta(r);
    }
    if (g.event_weight[s] > 0) {
      if (S0 <= 0) return -std::numeric_limits<double>::infinity();
      ll += event_term - g.event_weight[s] * std::log(S0);
    }
  }
  return ll;
}

GlmFit fit_weighted_cox(const CoxData& d, const FitOptions& opts) {
  const int p = static_cast<int>(d.x.cols());
  const int nrows = d.rows();
  if (static_cast<int>(d.time.size()) != nrows || static_cast<int>(d.event.size()) != nrows ||
      d.weight.size() != nrows || d.x.rows() != nrows)
    throw std::invalid_argument("fit_weighted_cox: size mismatch");
  if (nrows == 0 || p == 0) throw std::invalid_argument("fit_weighted_cox: empty problem");
  for (int r = 0; r < nrows; ++r) {
    if (d.weight(r) < 0 || !std::isfinite(d.weight(r)))
      throw std::invalid_argument("fit_weighted_cox: bad weight");
    if (d.subject[r] < 0 || d.subject[r] >= d.n_subjects)
      throw std::invalid_argument("fit_weighted_cox: subject id out of range");
  }

  CoxGroups g = group_by_time(d);
  FitDiagnostics diag;
  double total_events = std::accumulate(g.event_weight.begin(), g.event_weight.end(), 0.0);
  if (total_events <= 0) throw FitError("no (positively weighted) events", diag);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = cox_breslow_loglik(d, beta);

  auto grad_hess = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    grad.setZero(p);
    hess.setZero(p, p);
    Eigen::VectorXd eta = d.x * b;
    for (std::size_t s = 0; s < g.spans.size(); ++s) {
      if (g.event_weight[s] <= 0) continue;
      double S0 = 0.0;
      Eigen::VectorXd S1 = Eigen::VectorXd::Zero(p);
      Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(p, p);
      Eigen::VectorXd event_x = Eigen::VectorXd::Zero(p);
      for (int ix = g.spans[s].first; ix < g.spans[s].second; ++ix) {
        int r = g.order[ix];
        double rel = d.weight(r) * std::exp(eta(r));
        S0 += rel;
        S1.noalias() += rel * d.x.row(r).transpose();
        S2.noalias() += rel * d.x.row(r).transpose() * d.x.row(r);
        if (d.event[r]) event_x.noalias() += d.weight(r) * d.x.row(r).transpose();
      }
      Eigen::VectorXd xbar = S1 / S0;
      grad.noalias() += event_x - g.event_weight[s] * xbar;
      hess.noalias() += g.event_weight[s] * (S2 / S0 - xbar * xbar.transpose());
    }
  };

  Eigen::VectorXd grad(p);
  Eigen::MatrixXd hess(p, p);
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    grad_hess(beta, grad, hess);
    diag.iterations = iter;
    diag.max_abs_gradient = grad.cwiseAbs().maxCoeff();
    diag.max_abs_coefficient = beta.cwiseAbs().maxCoeff();
    if (diag.max_abs_gradient <= opts.gradient_tolerance * std::max(1.0, total_events)) {
      // Monotone partial likelihood (MLE at infinity) decays the gradient
      // geometrically while the coefficients keep walking, so the tolerance
      // can be met far from any finite maximizer. Detect it by probing one
      // more Newton step: near a true optimum the step is microscopic.
      Eigen::VectorXd probe = solve_spd(hess, grad, diag);
      if (probe.cwiseAbs().maxCoeff() > 1e-2 * (1.0 + beta.cwiseAbs().maxCoeff())) {
        diag.note = "gradient within tolerance but the Newton step is still macroscopic";
        throw FitError("cox fit has no finite maximizer (monotone partial likelihood)", diag);
      }
      diag.converged = true;
      GlmFit fit;
      fit.beta = beta;
      fit.bread = invert_spd(hess, diag);

      // Per-subject robust score residuals:
      //   U_i = sum over i's rows of w (x - xbar(t)) [event - exp(x beta) dLambda0(t)]
      // with dLambda0(t) = (weighted events at t) / S0(t).
      Eigen::VectorXd eta = d.x * beta;
      fit.score = Eigen::MatrixXd::Zero(d.n_subjects, p);
      for (std::size_t s = 0; s < g.spans.size(); ++s) {
        double S0 = 0.0;
        Eigen::VectorXd S1 = Eigen::VectorXd::Zero(p);
        for (int ix = g.spans[s].first; ix < g.spans[s].second; ++ix) {
          int r = g.order[ix];
          double rel = d.weight(r) * std::exp(eta(r));
          S0 += rel;
          S1.noalias() += rel * d.x.row(r).transpose();
        }
        if (S0 <= 0) continue;
        Eigen::VectorXd xbar = S1 / S0;
        double dlambda = g.event_weight[s] / S0;
        for (int ix = g.spans[s].first; ix < g.spans[s].second; ++ix) {
          int r = g.order[ix];
          double mart = (d.event[r] ? 1.0 : 0.0) - std::exp(eta(r)) * dlambda;
          fit.score.row(d.subject[r]) +=
              d.weight(r) * mart * (d.x.row(r) - xbar.transpose());
        }
      }
      fit.diagnostics = diag;
      return fit;
    }

    Eigen::VectorXd step = solve_spd(hess, grad, diag);
    double scale = 1.0;
    bool improved = false;
    // Same evaluation-noise floor as the logistic line search.
    double noise = std::max(2.3e-16 * nrows * (1.0 + std::abs(ll)), 1e-14);
    for (int h = 0; h < 40; ++h) {
      Eigen::VectorXd cand = beta + scale * step;
      double cand_ll = cox_breslow_loglik(d, cand);
      if (std::isfinite(cand_ll) && cand_ll >= ll - noise) {
        beta = cand;
        ll = cand_ll;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      diag.note = "step halving exhausted";
      throw FitError("cox fit failed to improve the partial likelihood", diag);
    }
    if (beta.cwiseAbs().maxCoeff() > 40) {
      diag.note = "coefficients diverging; partial likelihood likely monotone";
      throw FitError("cox fit diverged", diag);
    }
  }
  diag.note = "no convergence within iteration limit";
  throw FitError("cox fit did not converge", diag);
}

}  // namespace pmsm
