#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace pmsm {

enum class OutcomeMode { Mean, Survival };

// Longitudinal panel over discrete periods k = 0..K-1.
//
// Storage convention (one "period" carries everything revealed during it, in
// observation order L(k), A(k), C(k+1), Y(k+1)):
//   L  : n x (K*q), L(i, k*q + j) = j-th covariate at period k; NaN once the
//        subject has exited.
//   A  : n x K, treatment at period k; -1 once exited.
//   C  : n x K, C(i,k) = censoring indicator C(k+1) revealed after A(k);
//        -1 once exited. All zero when has_censoring is false.
//   Yt : n x K (survival mode), Yt(i,k) = event indicator Y(k+1); -1 once
//        exited, and -1 at the censoring period itself (Y(k+1) is not
//        observed when C(k+1)=1).
//   Y  : n (mean mode), scalar outcome; NaN when censored before K.
//
// A subject's periods run k = 0..n_periods(i)-1, where n_periods is the
// first t (1-based) with C(t)=1 or Y(t)=1, else K. The period at which the
// exit indicator itself is revealed is still observed: censoring at C(t+1)=1
// leaves L(t), A(t) observed because they precede C(t+1).
class LongPanel {
 public:
  LongPanel() = default;
  LongPanel(int n, int K, int q, OutcomeMode mode, bool has_censoring);

  int n() const { return static_cast<int>(A_.rows()); }
  int K() const { return K_; }
  int q() const { return q_; }
  OutcomeMode mode() const { return mode_; }
  bool has_censoring() const { return has_censoring_; }

  // Raw storage (public by design: the DGPs and CSV reader fill it in).
  Eigen::MatrixXd& L() { return L_; }
  Eigen::MatrixXi& A() { return A_; }
  Eigen::MatrixXi& C() { return C_; }
  Eigen::MatrixXi& Yt() { return Yt_; }
  Eigen::VectorXd& Y() { return Y_; }
  const Eigen::MatrixXd& L() const { return L_; }
  const Eigen::MatrixXi& A() const { return A_; }
  const Eigen::MatrixXi& C() const { return C_; }
  const Eigen::MatrixXi& Yt() const { return Yt_; }
  const Eigen::VectorXd& Y() const { return Y_; }

  // Checked accessors; throw on reads past a subject's exit so that stale
  // sentinel values never flow into numerics silently.
  double covariate(int i, int k, int j) const;
  int treatment(int i, int k) const;
  int censor_after(int i, int k) const;  // C(k+1)
  int event_after(int i, int k) const;   // Y(k+1), survival mode
  double outcome(int i) const;           // mean mode
  bool outcome_observed(int i) const;    // mean mode: C(K)=0 (or no censoring)

  // Number of observed periods (rows in long form) for subject i.
  int n_periods(int i) const;
  bool exited_by_censoring(int i) const;
  bool exited_by_event(int i) const;

  // New panel containing the listed subjects (repeats allowed; used by the
  // bootstrap and by Monte Carlo subsetting).
  LongPanel subset(const std::vector<int>& subjects) const;

  bool operator==(const LongPanel& other) const;

 private:
  int K_ = 0, q_ = 0;
  OutcomeMode mode_ = OutcomeMode::Mean;
  bool has_censoring_ = false;
  Eigen::MatrixXd L_;
  Eigen::MatrixXi A_, C_, Yt_;
  Eigen::VectorXd Y_;
};

struct Violation {
  int subject = -1;
  int time = -1;
  std::string rule;
};

// Structural checks: binary indicators while at risk, absorbing exits with
// missing markers afterwards, finite covariates, outcome presence consistent
// with censoring. Returns every violation found (empty means valid).
std::vector<Violation> validate(const LongPanel& panel);

// One row per observed (subject, period).
struct PersonPeriod {
  int subject = -1;
  int t = -1;
};

std::vector<PersonPeriod> expand_person_periods(const LongPanel& panel);

// Long CSV: columns id,t,L1..Lq,A[,C],Y|Yt. Mean mode writes the scalar Y on
// the final row only; survival mode writes the per-period event indicator
// under the header "Yt". Fields that are unobserved are left empty.
void write_csv(const std::string& path, const LongPanel& panel);
LongPanel read_csv(const std::string& path);

}  // namespace pmsm
