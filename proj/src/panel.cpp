#include "pmsm/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pmsm {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same_or_both_nan(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}
}  // namespace

LongPanel::LongPanel(int n, int K, int q, OutcomeMode mode, bool has_censoring)
    : K_(K), q_(q), mode_(mode), has_censoring_(has_censoring) {
  if (n < 0 || K < 1 || q < 0) throw std::invalid_argument("LongPanel: bad dimensions");
  L_ = Eigen::MatrixXd::Constant(n, K * q, kNaN);
  A_ = Eigen::MatrixXi::Constant(n, K, -1);
  C_ = Eigen::MatrixXi::Constant(n, K, has_censoring ? -1 : 0);
  if (mode == OutcomeMode::Survival) {
    Yt_ = Eigen::MatrixXi::Constant(n, K, -1);
    Y_.resize(0);
  } else {
    Yt_.resize(0, 0);
    Y_ = Eigen::VectorXd::Constant(n, kNaN);
  }
}

int LongPanel::n_periods(int i) const {
  for (int k = 0; k < K_; ++k) {
    bool c = has_censoring_ && C_(i, k) == 1;
    bool y = mode_ == OutcomeMode::Survival && Yt_(i, k) == 1;
    if (c || y) return k + 1;
    if (A_(i, k) < 0) return k;  // truncated record (invalid; validate() reports it)
  }
  return K_;
}

bool LongPanel::exited_by_censoring(int i) const {
  int p = n_periods(i);
  return has_censoring_ && p >= 1 && p <= K_ && C_(i, p - 1) == 1;
}

bool LongPanel::exited_by_event(int i) const {
  int p = n_periods(i);
  return mode_ == OutcomeMode::Survival && p >= 1 && Yt_(i, p - 1) == 1;
}

double LongPanel::covariate(int i, int k, int j) const {
  if (k >= n_periods(i)) throw std::out_of_range("covariate read past exit");
  return L_(i, k * q_ + j);
}

int LongPanel::treatment(int i, int k) const {
  if (k >= n_periods(i)) throw std::out_of_range("treatment read past exit");
  return A_(i, k);
}

int LongPanel::censor_after(int i, int k) const {
  if (k >= n_periods(i)) throw std::out_of_range("censoring read past exit");
  return C_(i, k);
}

int LongPanel::event_after(int i, int k) const {
  if (mode_ != OutcomeMode::Survival) throw std::logic_error("event_after: not survival mode");
  if (k >= n_periods(i)) throw std::out_of_range("event read past exit");
  if (C_(i, k) == 1) throw std::out_of_range("event unobserved at censoring period");
  return Yt_(i, k);
}

bool LongPanel::outcome_observed(int i) const {
  if (mode_ != OutcomeMode::Mean) throw std::logic_error("outcome_observed: not mean mode");
  // Censoring at the final indicator C(K) still leaves all K periods
  // observed, so "reached period K" is not enough.
  return !has_censoring_ || !exited_by_censoring(i);
}

double LongPanel::outcome(int i) const {
  if (!outcome_observed(i)) throw std::out_of_range("outcome read on censored subject");
  return Y_(i);
}

LongPanel LongPanel::subset(const std::vector<int>& subjects) const {
  LongPanel out(static_cast<int>(subjects.size()), K_, q_, mode_, has_censoring_);
  for (int r = 0; r < static_cast<int>(subjects.size()); ++r) {
    int i = subjects[r];
    if (i < 0 || i >= n()) throw std::out_of_range("subset: subject index");
    out.L_.row(r) = L_.row(i);
    out.A_.row(r) = A_.row(i);
    out.C_.row(r) = C_.row(i);
    if (mode_ == OutcomeMode::Survival) out.Yt_.row(r) = Yt_.row(i);
    else out.Y_(r) = Y_(i);
  }
  return out;
}

bool LongPanel::operator==(const LongPanel& other) const {
  if (n() != other.n() || K_ != other.K_ || q_ != other.q_ || mode_ != other.mode_ ||
      has_censoring_ != other.has_censoring_)
    return false;
  if (A_ != other.A_ || C_ != other.C_) return false;
  if (mode_ == OutcomeMode::Survival) {
    if (Yt_ != other.Yt_) return false;
  } else {
    for (int i = 0; i < n(); ++i)
      if (!same_or_both_nan(Y_(i), other.Y_(i))) return false;
  }
  for (int i = 0; i < n(); ++i)
    for (int c = 0; c < L_.cols(); ++c)
      if (!same_or_both_nan(L_(i, c), other.L_(i, c))) return false;
  return true;
}

std::vector<Violation> validate(const LongPanel& p) {
  std::vector<Violation> v;
  auto add = [&](int i, int t, const std::string& rule) { v.push_back({i, t, rule}); };
  const int n = p.n(), K = p.K(), q = p.q();
  for (int i = 0; i < n; ++i) {
    // Determine the exit period directly from the raw storage.
    int periods = K;
    bool cens_exit = false, event_exit = false;
    for (int k = 0; k < K; ++k) {
      if (p.has_censoring() && p.C()(i, k) == 1) {
        periods = k + 1;
        cens_exit = true;
        break;
      }
      if (p.mode() == OutcomeMode::Survival && p.Yt()(i, k) == 1) {
        periods = k + 1;
        event_exit = true;
        break;
      }
    }
    for (int k = 0; k < K; ++k) {
      bool at_risk = k < periods;
      int a = p.A()(i, k), c = p.C()(i, k);
      if (at_risk) {
        if (a != 0 && a != 1) add(i, k, "treatment not binary while at risk");
        if (p.has_censoring() && c != 0 && c != 1)
          add(i, k, "censoring indicator not binary while at risk");
        if (!p.has_censoring() && c != 0) add(i, k, "censoring set without censoring enabled");
        for (int j = 0; j < q; ++j)
          if (!std::isfinite(p.L()(i, k * q + j))) add(i, k, "covariate not finite while at risk");
        if (p.mode() == OutcomeMode::Survival) {
          int y = p.Yt()(i, k);
          bool y_observed = !(p.has_censoring() && c == 1);
          if (y_observed && y != 0 && y != 1) add(i, k, "event indicator not binary while at risk");
          if (!y_observed && y != -1) add(i, k, "event value present at censoring period");
        }
      } else {
        if (a != -1) add(i, k, "stale treatment after exit");
        if (p.has_censoring() && c != -1) add(i, k, "stale censoring indicator after exit");
        if (p.mode() == OutcomeMode::Survival && p.Yt()(i, k) != -1)
          add(i, k, "stale event indicator after exit");
        for (int j = 0; j < q; ++j)
          if (!std::isnan(p.L()(i, k * q + j))) add(i, k, "stale covariate after exit");
      }
    }
    if (p.mode() == OutcomeMode::Mean) {
      bool observed = !p.has_censoring() || (!cens_exit && periods == K);
      if (observed && !std::isfinite(p.Y()(i))) add(i, K - 1, "outcome missing on uncensored subject");
      if (!observed && !std::isnan(p.Y()(i))) add(i, K - 1, "outcome present on censored subject");
    }
    (void)event_exit;
  }
  return v;
}

std::vector<PersonPeriod> expand_person_periods(const LongPanel& p) {
  std::vector<PersonPeriod> rows;
  for (int i = 0; i < p.n(); ++i) {
    int periods = p.n_periods(i);
    for (int t = 0; t < periods; ++t) rows.push_back({i, t});
  }
  return rows;
}

namespace {

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// The scalar outcome lives on the final row of a fully observed record.
int final_row_t(int periods, int K) { return periods == K ? K - 1 : -1; }

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_csv(const std::string& path, const LongPanel& p) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_csv: cannot open " + path);
  const int q = p.q();
  f << "id,t";
  for (int j = 0; j < q; ++j) f << ",L" << (j + 1);
  f << ",A";
  if (p.has_censoring()) f << ",C";
  f << (p.mode() == OutcomeMode::Survival ? ",Yt" : ",Y") << "\n";
  for (int i = 0; i < p.n(); ++i) {
    int periods = p.n_periods(i);
    for (int t = 0; t < periods; ++t) {
      f << i << "," << t;
      for (int j = 0; j < q; ++j) f << "," << fmt_double(p.L()(i, t * q + j));
      f << "," << p.A()(i, t);
      if (p.has_censoring()) f << "," << p.C()(i, t);
      if (p.mode() == OutcomeMode::Survival) {
        if (p.has_censoring() && p.C()(i, t) == 1) f << ",";
        else f << "," << p.Yt()(i, t);
      } else {
        if (t == final_row_t(periods, p.K()) && p.outcome_observed(i))
          f << "," << fmt_double(p.Y()(i));
        else
          f << ",";
      }
      f << "\n";
    }
  }
}

LongPanel read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_csv: empty file");
  std::vector<std::string> header = split_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "t")
    throw std::runtime_error("read_csv: header must start with id,t");
  int q = 0;
  std::size_t col = 2;
  while (col < header.size() && header[col] == "L" + std::to_string(q + 1)) {
    ++q;
    ++col;
  }
  if (col >= header.size() || header[col] != "A")
    throw std::runtime_error("read_csv: missing column A");
  std::size_t a_col = col++;
  bool has_c = col < header.size() && header[col] == "C";
  std::size_t c_col = has_c ? col++ : 0;
  OutcomeMode mode;
  if (col < header.size() && header[col] == "Y") mode = OutcomeMode::Mean;
  else if (col < header.size() && header[col] == "Yt") mode = OutcomeMode::Survival;
  else throw std::runtime_error("read_csv: missing outcome column Y or Yt");
  std::size_t y_col = col++;
  if (col != header.size()) throw std::runtime_error("read_csv: unexpected trailing columns");

  struct Row {
    int t;
    std::vector<double> L;
    int A;
    int C;  // -1 when absent
    std::string y;
    int line_no;
  };
  std::map<long long, std::vector<Row>> by_id;
  std::vector<long long> id_order;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> parts = split_line(line);
    if (parts.size() != header.size())
      throw std::runtime_error("read_csv: wrong field count at line " + std::to_string(line_no));
    Row r;
    r.line_no = line_no;
    long long id;
    try {
      id = std::stoll(parts[0]);
      r.t = std::stoi(parts[1]);
      for (int j = 0; j < q; ++j) r.L.push_back(std::stod(parts[2 + j]));
      r.A = std::stoi(parts[a_col]);
      r.C = has_c ? std::stoi(parts[c_col]) : -1;
    } catch (const std::exception&) {
      throw std::runtime_error("read_csv: malformed value at line " + std::to_string(line_no));
    }
    r.y = parts[y_col];
    if (by_id.find(id) == by_id.end()) id_order.push_back(id);
    by_id[id].push_back(r);
  }
  if (by_id.empty()) throw std::runtime_error("read_csv: no data rows");

  int K = 0;
  for (const auto& kv : by_id)
    for (const Row& r : kv.second) K = std::max(K, r.t + 1);

  LongPanel p(static_cast<int>(by_id.size()), K, q, mode, has_c);
  int i = -1;
  for (long long id : id_order) {
    ++i;
    auto rows = by_id[id];
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    for (std::size_t rix = 0; rix < rows.size(); ++rix) {
      const Row& r = rows[rix];
      if (r.t != static_cast<int>(rix))
        throw std::runtime_error("read_csv: subject " + std::to_string(id) +
                                 " has non-contiguous periods at line " + std::to_string(r.line_no));
      for (int j = 0; j < q; ++j) p.L()(i, r.t * q + j) = r.L[j];
      p.A()(i, r.t) = r.A;
      if (has_c) p.C()(i, r.t) = r.C;
      if (mode == OutcomeMode::Survival) {
        if (!r.y.empty()) p.Yt()(i, r.t) = std::stoi(r.y);
        else if (!(has_c && r.C == 1))
          throw std::runtime_error("read_csv: missing event value at line " + std::to_string(r.line_no));
      } else if (!r.y.empty()) {
        p.Y()(i) = std::stod(r.y);
      }
    }
    // A record must either cover all K periods or end in an exit; anything
    // else is a truncated subject the format cannot represent.
    const Row& last = rows.back();
    bool exited = (has_c && last.C == 1) ||
                  (mode == OutcomeMode::Survival && !last.y.empty() && std::stoi(last.y) == 1);
    if (static_cast<int>(rows.size()) < K && !exited)
      throw std::runtime_error("read_csv: subject " + std::to_string(id) +
                               " ends at t=" + std::to_string(last.t) +
                               " with no censoring or event marker");
    if (mode == OutcomeMode::Mean) {
      bool observed = !has_c || static_cast<int>(rows.size()) == K;
      if (observed && std::isnan(p.Y()(i)))
        throw std::runtime_error("read_csv: subject " + std::to_string(id) + " missing outcome Y");
    }
  }
  return p;
}

}  // namespace pmsm
