#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "pmsm/mc.hpp"

using namespace pmsm;

namespace {

McConfig small_mean_config() {
  McConfig cfg;
  cfg.mode = OutcomeMode::Mean;
  cfg.normal = scenario_config("s1");
  cfg.normal.n = 300;
  cfg.form = ModelForm::Saturated;
  cfg.reps = 8;
  cfg.seed = 61;
  cfg.methods = {standard_method("ztest05"), standard_method("pztest20")};
  return cfg;
}

}  // namespace

TEST_CASE("method labels parse into variants, levels, and adjustment") {
  McMethod m = standard_method("ztest05");
  CHECK(m.variant == SelectionVariant::ZTest);
  CHECK(m.alpha == 0.05);
  CHECK_FALSE(m.adjust);
  CHECK(m.name == "ztest05");

  m = standard_method("pztest20");
  CHECK(m.variant == SelectionVariant::PZTest);
  CHECK(m.alpha == 0.20);

  m = standard_method("ztest05adj");
  CHECK(m.variant == SelectionVariant::ZTest);
  CHECK(m.alpha == 0.05);
  CHECK(m.adjust);

  CHECK_THROWS_AS(standard_method("ttest05"), std::invalid_argument);
  CHECK_THROWS_AS(standard_method("ztest5"), std::invalid_argument);
  CHECK_THROWS_AS(standard_method("ztest00"), std::invalid_argument);
  CHECK_THROWS_AS(standard_method("pztestxy"), std::invalid_argument);
}

TEST_CASE("selection-driven methods report the advertised estimator sets") {
  auto z = method_estimators(standard_method("ztest05"));
  REQUIRE(z.size() == 5);
  CHECK(z[0] == EstimatorKind::SW);
  CHECK(z[1] == EstimatorKind::RSW);
  CHECK(z[2] == EstimatorKind::PSW);
  CHECK(z[3] == EstimatorKind::SW_PSW);
  CHECK(z[4] == EstimatorKind::RSW_PSW);
  auto pz = method_estimators(standard_method("pztest20"));
  REQUIRE(pz.size() == 3);
  CHECK(pz[2] == EstimatorKind::PSW);
}

TEST_CASE("study output is deterministic and thread-count independent") {
  McConfig cfg = small_mean_config();
  cfg.threads = 1;
  McReport one = run_mc(cfg);
  cfg.threads = 4;
  McReport four = run_mc(cfg);
  CHECK(to_json(one) == to_json(four));

  McConfig other = small_mean_config();
  other.seed = 62;
  CHECK(to_json(one) != to_json(run_mc(other)));
}

TEST_CASE("study rows satisfy the arithmetic identities") {
  McConfig cfg = small_mean_config();
  McReport rep = run_mc(cfg);
  CHECK(rep.theta_true == doctest::Approx(4.0));
  CHECK(rep.m_star == 2);
  CHECK(rep.m_max == 4);
  REQUIRE(rep.selection.size() == 2);
  for (const SelectionRow& s : rep.selection) {
    REQUIRE(s.prob.size() == 4);
    CHECK(s.n_used + s.failures == cfg.reps);
    if (s.n_used > 0) {
      double total = 0;
      for (double pr : s.prob) {
        CHECK(pr >= 0);
        total += pr;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  REQUIRE(rep.estimates.size() == 5 + 3);
  for (const EstimateRow& e : rep.estimates) {
    CHECK(std::abs(e.rmse * e.rmse - e.bias * e.bias - e.se * e.se) < 1e-12);
    CHECK(e.coverage >= 0);
    CHECK(e.coverage <= 1);
    CHECK(e.mean_selected_m >= 1);
    CHECK(e.mean_selected_m <= 4);
    CHECK(e.n_used + e.failures == cfg.reps);
  }
}

TEST_CASE("reports serialize to json and csv") {
  McConfig cfg = small_mean_config();
  cfg.reps = 4;
  McReport rep = run_mc(cfg);

  nlohmann::json j = nlohmann::json::parse(to_json(rep));
  CHECK(j["reps"] == 4);
  CHECK(j["theta_true"] == doctest::Approx(4.0));
  CHECK(j["selection"].size() == 2);
  CHECK(j["estimates"].size() == 8);

  std::string dir = "mc_csv_tmp";
  write_csv(rep, dir);
  std::ifstream sel(dir + "/selection.csv");
  REQUIRE(sel.good());
  std::string line;
  int sel_rows = -1;  // header
  while (std::getline(sel, line))
    if (!line.empty()) ++sel_rows;
  CHECK(sel_rows == 2 * 4);  // methods x m_max
  std::ifstream est(dir + "/estimates.csv");
  REQUIRE(est.good());
  int est_rows = -1;
  while (std::getline(est, line))
    if (!line.empty()) ++est_rows;
  CHECK(est_rows == 8);
  std::filesystem::remove_all(dir);
}

TEST_CASE("true-weight studies run with supplied numerator cells") {
  McConfig cfg = small_mean_config();
  cfg.reps = 4;
  cfg.true_weights = true;
  McReport rep = run_mc(cfg);
  for (const EstimateRow& e : rep.estimates) {
    CHECK(std::isfinite(e.bias));
    CHECK(std::isfinite(e.se));
  }
}

TEST_CASE("weight truncation options flow through the study") {
  McConfig cfg = small_mean_config();
  cfg.reps = 3;
  cfg.truncate_pct = 0.01;
  McReport rep = run_mc(cfg);
  CHECK(rep.estimates.size() == 8);
  for (const EstimateRow& e : rep.estimates) CHECK(std::isfinite(e.rmse));
}

TEST_CASE("survival studies run end to end") {
  McConfig cfg;
  cfg.mode = OutcomeMode::Survival;
  cfg.survival.n = 2500;
  cfg.survival.K = 12;
  cfg.form = ModelForm::MainEffect;
  cfg.reps = 3;
  cfg.seed = 63;
  cfg.methods = {standard_method("pztest20")};
  McReport rep = run_mc(cfg);
  CHECK(rep.m_max == 10);
  CHECK(rep.theta_true == doctest::Approx(-0.87));
  REQUIRE(rep.selection.size() == 1);
  CHECK(rep.selection[0].prob.size() == 10);
  REQUIRE(rep.estimates.size() == 3);
  for (const EstimateRow& e : rep.estimates) {
    CHECK(e.n_used + e.failures == cfg.reps);
    CHECK(e.n_used >= 2);  // the fits are well identified at this size
    CHECK(std::isfinite(e.bias));
    CHECK(e.mean_selected_m >= 1);
    CHECK(e.mean_selected_m <= 10);
  }
}

TEST_CASE("study configuration errors are rejected up front") {
  McConfig cfg = small_mean_config();
  cfg.methods.clear();
  CHECK_THROWS_AS(run_mc(cfg), std::invalid_argument);

  cfg = small_mean_config();
  cfg.reps = 0;
  CHECK_THROWS_AS(run_mc(cfg), std::invalid_argument);

  cfg = small_mean_config();
  cfg.m_max = 9;
  CHECK_THROWS_AS(run_mc(cfg), std::invalid_argument);

  cfg = small_mean_config();
  cfg.methods = {standard_method("ztest05adj")};
  cfg.true_weights = true;
  CHECK_THROWS_AS(run_mc(cfg), std::invalid_argument);

  McConfig sc;
  sc.mode = OutcomeMode::Survival;
  sc.survival.n = 50;
  sc.survival.K = 6;
  sc.reps = 1;
  sc.methods = {standard_method("ztest05adj")};
  CHECK_THROWS_AS(run_mc(sc), std::invalid_argument);
}

TEST_CASE("fixed-window rejection rates are well formed") {
  NormalDgpConfig cfg = scenario_config("s1");
  cfg.n = 250;
  CalibrationResult cal =
      pair_rejection_rate(cfg, 2, 0.2, SelectionVariant::ZTest, ModelForm::Saturated, 10, 64, 1);
  CHECK(cal.reps == 10);
  CHECK(cal.rejections + cal.failures <= 10);
  CHECK(cal.rate >= 0);
  CHECK(cal.rate <= 1);
  // Deterministic across thread counts as well.
  CalibrationResult cal4 =
      pair_rejection_rate(cfg, 2, 0.2, SelectionVariant::ZTest, ModelForm::Saturated, 10, 64, 4);
  CHECK(cal4.rejections == cal.rejections);
  CHECK(cal4.failures == cal.failures);
}
