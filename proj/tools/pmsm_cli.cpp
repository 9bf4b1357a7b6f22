// Command-line front end: simulate panels, fit weighted estimators, run the
// window-selection procedure, and drive full repeated-sampling studies.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pmsm/dgp.hpp"
#include "pmsm/estimate.hpp"
#include "pmsm/infer.hpp"
#include "pmsm/mc.hpp"
#include "pmsm/oracle.hpp"
#include "pmsm/panel.hpp"
#include "pmsm/select.hpp"

namespace {

using nlohmann::json;
using namespace pmsm;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) {
      if (std::isnan(m(i, c)))
        row.push_back(nullptr);
      else
        row.push_back(m(i, c));
    }
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  int n = static_cast<int>(rows.size());
  int k = n > 0 ? static_cast<int>(rows[0].size()) : 0;
  Eigen::MatrixXd m(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c)
      m(i, c) = rows[i][c].is_null() ? std::numeric_limits<double>::quiet_NaN()
                                     : rows[i][c].get<double>();
  return m;
}

void write_truth(const std::string& path, const std::string& scenario, OutcomeMode mode, int n,
                 std::uint64_t seed, const TruthRecord& truth) {
  json j;
  j["scenario"] = scenario;
  j["mode"] = mode == OutcomeMode::Mean ? "mean" : "survival";
  j["n"] = n;
  j["seed"] = seed;
  j["theta_true"] = truth.theta_true;
  j["m_star"] = truth.m_star;
  j["p_treat"] = matrix_to_json(truth.p_treat);
  if (truth.p_cens.size() > 0) j["p_cens"] = matrix_to_json(truth.p_cens);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

TruthRecord read_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  json j;
  in >> j;
  TruthRecord t;
  t.theta_true = j.at("theta_true").get<double>();
  t.m_star = j.at("m_star").get<int>();
  t.p_treat = matrix_from_json(j.at("p_treat"));
  if (j.count("p_cens")) t.p_cens = matrix_from_json(j.at("p_cens"));
  return t;
}

WeightKind parse_weights(const std::string& s, bool* combined = nullptr,
                         WeightKind* base = nullptr) {
  if (combined) *combined = false;
  if (s == "sw") return WeightKind::SW;
  if (s == "rsw") return WeightKind::RSW;
  if (s == "psw") return WeightKind::PSW;
  if ((s == "sw_psw" || s == "rsw_psw") && combined && base) {
    *combined = true;
    *base = s == "sw_psw" ? WeightKind::SW : WeightKind::RSW;
    return WeightKind::PSW;
  }
  throw CLI::ValidationError("--weights", "expected sw, rsw, psw, sw_psw or rsw_psw");
}

ModelForm parse_form(const std::string& s) {
  if (s == "saturated") return ModelForm::Saturated;
  if (s == "main") return ModelForm::MainEffect;
  throw CLI::ValidationError("--model", "expected saturated or main");
}

struct WeightFlags {
  std::vector<double> truncate;  // LO HI
  double truncate_pct = -1;
  bool true_weights = false;
  std::string truth_path;
  bool adjust = false;
};

void add_weight_flags(CLI::App* cmd, WeightFlags& flags) {
  cmd->add_option("--truncate", flags.truncate,
                  "clamp weights into [LO, HI] (two values)")
      ->expected(2);
  cmd->add_option("--truncate-pct", flags.truncate_pct,
                  "clamp weights at the given symmetric percentile, e.g. 0.01");
  cmd->add_flag("--true-weights", flags.true_weights,
                "use generating-probability denominators with empirical-cell numerators");
  cmd->add_option("--truth", flags.truth_path, "truth.json from `simulate` (for --true-weights)");
  cmd->add_flag("--adjust-l0", flags.adjust,
                "adjust for the baseline covariate in weight numerators and the outcome model");
}

WeightModelSpec spec_from_flags(const LongPanel& panel, const WeightFlags& flags,
                                int rsw_window_start) {
  WeightModelSpec spec = WeightModelSpec::defaults(panel.mode());
  if (!flags.truncate.empty()) spec.truncate_values = {flags.truncate[0], flags.truncate[1]};
  if (flags.truncate_pct > 0) spec.truncate_pct = flags.truncate_pct;
  if (flags.adjust) spec.num_use_L0 = true;
  if (flags.true_weights) {
    if (flags.truth_path.empty())
      throw CLI::ValidationError("--true-weights", "requires --truth truth.json");
    if (flags.adjust)
      throw CLI::ValidationError("--adjust-l0", "not available with --true-weights");
    TruthRecord truth = read_truth(flags.truth_path);
    spec.supplied = empirical_true_probs(panel, truth, rsw_window_start);
  }
  return spec;
}

void warn_floored(const WeightSet& ws) {
  if (ws.floored > 0)
    std::cerr << "warning: " << ws.floored
              << " probability evaluations hit the positivity floor; treatment assignment "
                 "is nearly deterministic somewhere (positivity close to failing)\n";
}

int cmd_simulate(const std::string& scenario, int n, std::uint64_t seed,
                 const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  LongPanel panel;
  TruthRecord truth;
  OutcomeMode mode;
  if (scenario == "survival") {
    SurvivalDgpConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    std::tie(panel, truth) = generate_survival(cfg);
    mode = OutcomeMode::Survival;
  } else {
    NormalDgpConfig cfg = scenario_config(scenario);
    cfg.n = n;
    cfg.seed = seed;
    std::tie(panel, truth) = generate_normal(cfg);
    mode = OutcomeMode::Mean;
  }
  write_csv(out_dir + "/panel.csv", panel);
  write_truth(out_dir + "/truth.json", scenario, mode, n, seed, truth);
  std::cout << "wrote " << out_dir << "/panel.csv and truth.json (n=" << n
            << ", theta_true=" << truth.theta_true << ", m*=" << truth.m_star << ")\n";
  return 0;
}

int cmd_fit(const std::string& in_path, const std::string& weights_name, int m,
            const std::string& form_name, double alpha, const WeightFlags& flags,
            const std::string& format) {
  LongPanel panel = read_csv(in_path);
  bool combined = false;
  WeightKind base = WeightKind::SW;
  WeightKind kind = parse_weights(weights_name, &combined, &base);
  if (m < 1 || m > panel.K()) throw CLI::ValidationError("--m", "window out of [1,K]");
  int rsw_start = (!combined && kind == WeightKind::RSW) ? panel.K() - m : -1;
  WeightModelSpec spec = spec_from_flags(panel, flags, rsw_start);
  WeightBuilder builder(panel, spec);
  ModelForm form = parse_form(form_name);

  EstimateResult res;
  if (combined)
    res = combined_estimate(builder, base, m, form, alpha, flags.adjust);
  else
    res = estimate_at(builder, kind, m, form, flags.adjust);
  warn_floored(builder.build(res.weights_used, m));

  ConfidenceInterval ci = confidence_interval(res.estimate, res.variance, 0.95);
  json j;
  j["estimator"] = weights_name;
  j["m"] = m;
  j["estimate"] = res.estimate;
  j["variance"] = res.variance;
  j["se"] = std::sqrt(res.variance);
  j["ci"] = {ci.lo, ci.hi};
  j["n"] = res.n;
  if (panel.mode() == OutcomeMode::Survival) {
    j["n_events"] = res.n_events;
    j["hr"] = std::exp(res.estimate);
    j["hr_ci"] = {std::exp(ci.lo), std::exp(ci.hi)};
  } else {
    j["n_arm1"] = res.n_arm1;
    j["n_arm0"] = res.n_arm0;
  }
  if (res.pretest_rejected) j["pretest_rejected"] = *res.pretest_rejected;

  if (format == "json") {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << weights_name << " estimate at m=" << m << ": " << res.estimate
              << " (se=" << std::sqrt(res.variance) << ", 95% ci [" << ci.lo << ", " << ci.hi
              << "])\n";
    if (panel.mode() == OutcomeMode::Survival)
      std::cout << "hazard ratio: " << std::exp(res.estimate) << " (95% ci ["
                << std::exp(ci.lo) << ", " << std::exp(ci.hi) << "])\n";
    if (res.pretest_rejected)
      std::cout << "pretest " << (*res.pretest_rejected ? "rejected" : "kept")
                << " the partial weights\n";
  }
  return 0;
}

int cmd_select(const std::string& in_path, const std::string& variant_name, double alpha,
               const std::string& form_name, int start_m, int m_max, const WeightFlags& flags,
               const std::string& format) {
  LongPanel panel = read_csv(in_path);
  WeightModelSpec spec = spec_from_flags(panel, flags, -1);
  WeightBuilder builder(panel, spec);
  SelectionOptions opts;
  opts.alpha = alpha;
  opts.variant = variant_name == "pztest" ? SelectionVariant::PZTest : SelectionVariant::ZTest;
  if (variant_name != "ztest" && variant_name != "pztest")
    throw CLI::ValidationError("--variant", "expected ztest or pztest");
  opts.form = parse_form(form_name);
  opts.adjust_baseline = flags.adjust;
  opts.start_m = start_m;
  opts.m_max = m_max;
  SelectionResult sel = closed_test_select(builder, opts);
  if (format == "json")
    std::cout << selection_json(sel) << "\n";
  else
    std::cout << selection_report(sel);
  return 0;
}

int cmd_mc(const std::string& scenario, int n, int reps, std::vector<std::string> method_names,
           const std::string& variant_name, std::vector<double> alphas, std::string form_name,
           std::uint64_t seed, int threads, int m_max, const WeightFlags& flags,
           const std::string& out_dir, const std::string& format) {
  McConfig cfg;
  if (scenario == "survival") {
    cfg.mode = OutcomeMode::Survival;
    cfg.survival.n = n;
  } else {
    cfg.mode = OutcomeMode::Mean;
    cfg.normal = scenario_config(scenario);
    cfg.normal.n = n;
  }
  if (form_name == "auto")
    form_name = (scenario == "s1") ? "saturated" : "main";
  cfg.form = cfg.mode == OutcomeMode::Survival ? ModelForm::MainEffect
                                               : parse_form(form_name);
  cfg.reps = reps;
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.m_max = m_max;
  cfg.true_weights = flags.true_weights;
  if (!flags.truncate.empty()) cfg.truncate_values = {flags.truncate[0], flags.truncate[1]};
  if (flags.truncate_pct > 0) cfg.truncate_pct = flags.truncate_pct;

  if (method_names.empty()) {
    if (alphas.empty()) alphas.push_back(cfg.mode == OutcomeMode::Survival ? 0.20 : 0.05);
    for (double a : alphas) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%02d%s",
                    variant_name == "pztest" ? "pztest" : "ztest",
                    static_cast<int>(std::lround(a * 100)), flags.adjust ? "adj" : "");
      method_names.push_back(buf);
    }
  }
  for (const std::string& name : method_names) cfg.methods.push_back(standard_method(name));

  McReport report = run_mc(cfg);
  std::filesystem::create_directories(out_dir);
  write_csv(report, out_dir);
  {
    std::ofstream out(out_dir + "/report.json");
    out << to_json(report) << "\n";
  }
  if (format == "json") {
    std::cout << to_json(report) << "\n";
  } else {
    std::cout << "theta_true=" << report.theta_true << " m*=" << report.m_star
              << " reps=" << report.reps << "\n";
    for (const SelectionRow& s : report.selection) {
      std::cout << s.method << " selection:";
      for (std::size_t m = 0; m < s.prob.size(); ++m)
        std::cout << " P[m=" << (m + 1) << "]=" << s.prob[m];
      if (s.failures) std::cout << " (failures=" << s.failures << ")";
      std::cout << "\n";
    }
    for (const EstimateRow& e : report.estimates) {
      const char* kn = e.kind == EstimatorKind::SW       ? "sw"
                       : e.kind == EstimatorKind::RSW    ? "rsw"
                       : e.kind == EstimatorKind::PSW    ? "psw"
                       : e.kind == EstimatorKind::SW_PSW ? "sw_psw"
                                                         : "rsw_psw";
      std::cout << e.method << " " << kn << ": bias=" << e.bias << " se=" << e.se
                << " rmse=" << e.rmse << " cp=" << e.coverage << " n=" << e.n_used << "\n";
    }
    std::cout << "results written to " << out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inverse-probability-weighted estimation with treatment-history windows"};
  app.require_subcommand(1);

  std::string scenario = "s1", in_path, out_dir = "out", format = "text";
  std::string weights_name = "psw", form_name = "auto", variant_name = "ztest";
  int n = 5000, reps = 1000, m = 1, start_m = 0, m_max = -1, threads = 1;
  double alpha = 0.05;
  std::vector<double> alphas;
  std::vector<std::string> method_names;
  std::uint64_t seed = 1;
  WeightFlags flags;

  CLI::App* sim = app.add_subcommand("simulate", "draw a panel and write panel.csv + truth.json");
  sim->add_option("--scenario", scenario, "s1, s2, s3 or survival")->capture_default_str();
  sim->add_option("--n", n, "subjects")->capture_default_str();
  sim->add_option("--seed", seed, "rng seed")->capture_default_str();
  sim->add_option("--out", out_dir, "output directory")->capture_default_str();

  CLI::App* fit = app.add_subcommand("fit", "estimate one contrast from a panel csv");
  fit->add_option("--in", in_path, "panel csv")->required();
  fit->add_option("--weights", weights_name, "sw, rsw, psw, sw_psw or rsw_psw")
      ->capture_default_str();
  fit->add_option("--m", m, "treatment-history window")->required();
  fit->add_option("--model", form_name, "saturated or main (default: saturated)");
  fit->add_option("--alpha", alpha, "pretest level for combined estimators")
      ->capture_default_str();
  fit->add_option("--format", format, "text or json")->capture_default_str();
  add_weight_flags(fit, flags);

  CLI::App* sel = app.add_subcommand("select", "run the window-selection procedure");
  sel->add_option("--in", in_path, "panel csv")->required();
  sel->add_option("--variant", variant_name, "ztest or pztest")->capture_default_str();
  sel->add_option("--alpha", alpha, "test level")->capture_default_str();
  sel->add_option("--model", form_name, "saturated or main (default: saturated)");
  sel->add_option("--start-m", start_m, "start the sequence above this window")
      ->capture_default_str();
  sel->add_option("--m-max", m_max, "largest admissible window (-1: default)")
      ->capture_default_str();
  sel->add_option("--format", format, "text or json")->capture_default_str();
  add_weight_flags(sel, flags);

  CLI::App* mc = app.add_subcommand("mc", "repeated-sampling study");
  mc->add_option("--scenario", scenario, "s1, s2, s3 or survival")->capture_default_str();
  mc->add_option("--n", n, "subjects per replication")->capture_default_str();
  mc->add_option("--reps", reps, "replications")->capture_default_str();
  mc->add_option("--method", method_names,
                 "method labels like ztest05, pztest20, ztest05adj (repeatable)");
  mc->add_option("--variant", variant_name, "ztest or pztest (with --alpha)")
      ->capture_default_str();
  mc->add_option("--alpha", alphas, "test level (repeatable, with --variant)");
  mc->add_option("--model", form_name, "saturated, main or auto")->capture_default_str();
  mc->add_option("--seed", seed, "master seed")->capture_default_str();
  mc->add_option("--threads", threads, "worker threads")->capture_default_str();
  mc->add_option("--m-max", m_max, "largest admissible window (-1: default)")
      ->capture_default_str();
  mc->add_option("--out", out_dir, "output directory")->capture_default_str();
  mc->add_option("--format", format, "text or json")->capture_default_str();
  add_weight_flags(mc, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(scenario, n, seed, out_dir);
    if (fit->parsed()) {
      if (form_name == "auto") form_name = "saturated";
      return cmd_fit(in_path, weights_name, m, form_name, alpha, flags, format);
    }
    if (sel->parsed()) {
      if (form_name == "auto") form_name = "saturated";
      return cmd_select(in_path, variant_name, alpha, form_name, start_m, m_max, flags, format);
    }
    if (mc->parsed())
      return cmd_mc(scenario, n, reps, method_names, variant_name, alphas, form_name, seed,
                    threads, m_max, flags, out_dir, format);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
