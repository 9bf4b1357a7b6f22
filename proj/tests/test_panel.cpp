#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "pmsm/dgp.hpp"
#include "pmsm/panel.hpp"

using namespace pmsm;

namespace {

// Three subjects, K=4, one covariate; subject 1 is censored by C(3)=1.
LongPanel toy_mean_panel() {
  LongPanel p(3, 4, 1, OutcomeMode::Mean, true);
  for (int k = 0; k < 4; ++k) {
    p.L()(0, k) = 0.1 * (k + 1);
    p.A()(0, k) = k % 2;
    p.C()(0, k) = 0;
  }
  p.Y()(0) = 2.5;
  for (int k = 0; k < 3; ++k) {
    p.L()(1, k) = 1.0 / 3.0 + k;
    p.A()(1, k) = 1;
    p.C()(1, k) = k == 2 ? 1 : 0;
  }
  for (int k = 0; k < 4; ++k) {
    p.L()(2, k) = -0.5 * k;
    p.A()(2, k) = 1;
    p.C()(2, k) = 0;
  }
  p.Y()(2) = -1.25;
  return p;
}

// Two subjects, K=3: subject 0 has the event at Y(2), subject 1 is censored
// at C(1) (so its event indicator at period 0 is never observed).
LongPanel toy_survival_panel() {
  LongPanel p(2, 3, 1, OutcomeMode::Survival, true);
  p.L()(0, 0) = 0.0;
  p.A()(0, 0) = 1;
  p.C()(0, 0) = 0;
  p.Yt()(0, 0) = 0;
  p.L()(0, 1) = 1.0;
  p.A()(0, 1) = 0;
  p.C()(0, 1) = 0;
  p.Yt()(0, 1) = 1;
  p.L()(1, 0) = 0.5;
  p.A()(1, 0) = 0;
  p.C()(1, 0) = 1;
  return p;
}

std::string tmp_path(const std::string& name) { return name; }

}  // namespace

TEST_CASE("panel accessors respect exit boundaries") {
  LongPanel p = toy_mean_panel();
  CHECK(p.n() == 3);
  CHECK(p.K() == 4);
  CHECK(p.n_periods(0) == 4);
  CHECK(p.n_periods(1) == 3);
  CHECK(p.n_periods(2) == 4);
  CHECK_FALSE(p.exited_by_censoring(0));
  CHECK(p.exited_by_censoring(1));
  CHECK(p.outcome_observed(0));
  CHECK_FALSE(p.outcome_observed(1));
  CHECK(p.outcome(0) == 2.5);
  CHECK(p.censor_after(1, 2) == 1);
  CHECK(p.treatment(1, 2) == 1);
  CHECK(p.covariate(1, 2, 0) == doctest::Approx(1.0 / 3.0 + 2));
  CHECK_THROWS_AS(p.outcome(1), std::out_of_range);
  CHECK_THROWS_AS(p.treatment(1, 3), std::out_of_range);
  CHECK_THROWS_AS(p.covariate(1, 3, 0), std::out_of_range);
  CHECK_THROWS_AS(p.censor_after(1, 3), std::out_of_range);
  CHECK(validate(p).empty());
}

TEST_CASE("survival accessors hide the event value at the censoring period") {
  LongPanel p = toy_survival_panel();
  CHECK(p.n_periods(0) == 2);
  CHECK(p.n_periods(1) == 1);
  CHECK(p.exited_by_event(0));
  CHECK_FALSE(p.exited_by_censoring(0));
  CHECK(p.exited_by_censoring(1));
  CHECK_FALSE(p.exited_by_event(1));
  CHECK(p.event_after(0, 0) == 0);
  CHECK(p.event_after(0, 1) == 1);
  CHECK_THROWS_AS(p.event_after(1, 0), std::out_of_range);
  CHECK_THROWS_AS(p.event_after(0, 2), std::out_of_range);
  CHECK(validate(p).empty());
}

TEST_CASE("person-period expansion stops at each subject's exit") {
  LongPanel p = toy_mean_panel();
  std::vector<PersonPeriod> rows = expand_person_periods(p);
  REQUIRE(rows.size() == 11);  // 4 + 3 + 4
  // Frozen expansion for the censored subject: exactly periods 0,1,2.
  std::vector<PersonPeriod> mid(rows.begin() + 4, rows.begin() + 7);
  for (int t = 0; t < 3; ++t) {
    CHECK(mid[t].subject == 1);
    CHECK(mid[t].t == t);
  }
}

TEST_CASE("validate reports specific structural violations") {
  auto has_rule = [](const std::vector<Violation>& v, const std::string& rule, int subject,
                     int time) {
    for (const Violation& x : v)
      if (x.rule == rule && x.subject == subject && x.time == time) return true;
    return false;
  };

  {
    LongPanel p = toy_mean_panel();
    p.A()(0, 1) = 2;
    CHECK(has_rule(validate(p), "treatment not binary while at risk", 0, 1));
  }
  {
    LongPanel p = toy_mean_panel();
    p.A()(1, 3) = 0;  // subject 1 exited after period 2
    CHECK(has_rule(validate(p), "stale treatment after exit", 1, 3));
  }
  {
    LongPanel p = toy_mean_panel();
    p.L()(0, 2) = std::numeric_limits<double>::infinity();
    CHECK(has_rule(validate(p), "covariate not finite while at risk", 0, 2));
  }
  {
    LongPanel p = toy_mean_panel();
    p.Y()(0) = std::numeric_limits<double>::quiet_NaN();
    CHECK(has_rule(validate(p), "outcome missing on uncensored subject", 0, 3));
  }
  {
    LongPanel p = toy_mean_panel();
    p.Y()(1) = 0.0;  // censored subjects must not carry an outcome
    CHECK(has_rule(validate(p), "outcome present on censored subject", 1, 3));
  }
  {
    LongPanel p = toy_survival_panel();
    p.Yt()(1, 0) = 0;  // value recorded where censoring hides it
    CHECK(has_rule(validate(p), "event value present at censoring period", 1, 0));
  }
}

TEST_CASE("subset keeps rows intact and allows repeats") {
  LongPanel p = toy_mean_panel();
  LongPanel s = p.subset({2, 0, 2});
  REQUIRE(s.n() == 3);
  CHECK(s.Y()(0) == p.Y()(2));
  CHECK(s.Y()(1) == p.Y()(0));
  CHECK(s.A().row(2) == p.A().row(2));
  CHECK(s.L().row(0) == p.L().row(2));
  CHECK(validate(s).empty());
  CHECK_THROWS_AS(p.subset({3}), std::out_of_range);
}

TEST_CASE("csv round trip is exact for a hand-built censored mean panel") {
  LongPanel p = toy_mean_panel();
  std::string path = tmp_path("panel_rt_mean.csv");
  write_csv(path, p);
  LongPanel back = read_csv(path);
  CHECK(back == p);
  std::remove(path.c_str());
}

TEST_CASE("csv round trip is exact for generated panels") {
  {
    NormalDgpConfig cfg = scenario_config("s3");
    cfg.n = 60;
    cfg.seed = 9;
    auto [p, truth] = generate_normal(cfg);
    std::string path = tmp_path("panel_rt_normal.csv");
    write_csv(path, p);
    CHECK(read_csv(path) == p);
    std::remove(path.c_str());
  }
  {
    SurvivalDgpConfig cfg;
    cfg.n = 80;
    cfg.K = 12;
    cfg.seed = 10;
    auto [p, truth] = generate_survival(cfg);
    std::string path = tmp_path("panel_rt_survival.csv");
    write_csv(path, p);
    CHECK(read_csv(path) == p);
    std::remove(path.c_str());
  }
}

TEST_CASE("csv reader rejects malformed input with a pointed message") {
  auto write_file = [](const std::string& path, const std::string& body) {
    std::ofstream f(path);
    f << body;
  };
  auto message_of = [](const std::string& path) {
    try {
      read_csv(path);
    } catch (const std::runtime_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };

  std::string path = tmp_path("panel_bad.csv");

  write_file(path, "t,id,A,Y\n");
  CHECK(message_of(path).find("header must start with id,t") != std::string::npos);

  write_file(path, "id,t,L1,A,Y\n0,0,0.5,1\n");
  CHECK(message_of(path).find("wrong field count") != std::string::npos);

  write_file(path, "id,t,L1,A,Y\n0,0,0.5,1,\n0,1,0.2,0,\n");
  CHECK(message_of(path).find("missing outcome Y") != std::string::npos);

  // K is inferred as 2 from another subject, so subject 0 is truncated.
  write_file(path, "id,t,L1,A,C,Y\n0,0,0.5,1,0,\n1,0,0.1,0,0,\n1,1,0.2,0,0,3.0\n");
  CHECK(message_of(path).find("no censoring or event marker") != std::string::npos);

  write_file(path, "id,t,L1,A,Y\n0,0,0.5,oops,1.0\n");
  CHECK(message_of(path).find("malformed value") != std::string::npos);

  write_file(path, "id,t,L1,A,Y\n0,1,0.5,1,1.0\n");
  CHECK(message_of(path).find("non-contiguous") != std::string::npos);

  std::remove(path.c_str());
}
