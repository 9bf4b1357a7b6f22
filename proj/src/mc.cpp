#include "pmsm/mc.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "pmsm/infer.hpp"
#include "pmsm/oracle.hpp"
#include "pmsm/rng.hpp"

namespace pmsm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* kind_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::SW: return "sw";
    case EstimatorKind::RSW: return "rsw";
    case EstimatorKind::PSW: return "psw";
    case EstimatorKind::SW_PSW: return "sw_psw";
    default: return "rsw_psw";
  }
}

struct RepResult {
  std::vector<int> selected;            // per method, -1 when selection failed
  std::vector<double> est, var;         // per (method, estimator) cell, NaN on failure
};

RepResult run_one(const McConfig& cfg, int m_max,
                  const std::vector<std::vector<EstimatorKind>>& ests,
                  const std::vector<int>& off, int r) {
  const int M = static_cast<int>(cfg.methods.size());
  RepResult out;
  out.selected.assign(M, -1);
  out.est.assign(off[M], kNaN);
  out.var.assign(off[M], kNaN);

  std::mt19937_64 rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r));
  LongPanel panel;
  TruthRecord truth;
  if (cfg.mode == OutcomeMode::Mean)
    std::tie(panel, truth) = generate_normal(cfg.normal, rng);
  else
    std::tie(panel, truth) = generate_survival(cfg.survival, rng);

  std::optional<WeightBuilder> plain, adjusted;
  auto builder_for = [&](bool adjust) -> WeightBuilder& {
    std::optional<WeightBuilder>& slot = adjust ? adjusted : plain;
    if (!slot) {
      WeightModelSpec spec = WeightModelSpec::defaults(panel.mode());
      spec.truncate_values = cfg.truncate_values;
      spec.truncate_pct = cfg.truncate_pct;
      if (adjust) spec.num_use_L0 = true;
      if (cfg.true_weights) spec.supplied = empirical_true_probs(panel, truth);
      slot.emplace(panel, spec);
    }
    return *slot;
  };

  for (int mi = 0; mi < M; ++mi) {
    const McMethod& method = cfg.methods[mi];
    try {
      WeightBuilder& b = builder_for(method.adjust);
      SelectionOptions so;
      so.alpha = method.alpha;
      so.variant = method.variant;
      so.form = cfg.form;
      so.adjust_baseline = method.adjust;
      so.m_max = m_max;
      SelectionResult sel = closed_test_select(b, so);
      out.selected[mi] = sel.selected_m;
      for (std::size_t ei = 0; ei < ests[mi].size(); ++ei) {
        EstimatorKind kind = ests[mi][ei];
        try {
          EstimateResult er;
          if (kind == EstimatorKind::SW_PSW || kind == EstimatorKind::RSW_PSW) {
            WeightKind base =
                kind == EstimatorKind::SW_PSW ? WeightKind::SW : WeightKind::RSW;
            er = combined_estimate(b, base, sel.selected_m, cfg.form, method.alpha,
                                   method.adjust);
          } else {
            WeightKind wk = kind == EstimatorKind::SW    ? WeightKind::SW
                            : kind == EstimatorKind::RSW ? WeightKind::RSW
                                                         : WeightKind::PSW;
            er = estimate_at(b, wk, sel.selected_m, cfg.form, method.adjust);
          }
          out.est[off[mi] + static_cast<int>(ei)] = er.estimate;
          out.var[off[mi] + static_cast<int>(ei)] = er.variance;
        } catch (const std::runtime_error&) {
          // estimation failed in this cell only; leave it NaN
        }
      }
    } catch (const std::runtime_error&) {
      // weight fitting or selection failed: the whole method is out for
      // this replication
    }
  }
  return out;
}

void run_pool(int reps, int threads, const std::function<void(int)>& body) {
  int nt = std::max(1, std::min(threads, reps));
  if (nt == 1) {
    for (int r = 0; r < reps; ++r) body(r);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr eptr;
  std::mutex mu;
  auto worker = [&] {
    while (true) {
      int r = next.fetch_add(1);
      if (r >= reps) return;
      try {
        body(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!eptr) eptr = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (eptr) std::rethrow_exception(eptr);
}

}  // namespace

McMethod standard_method(const std::string& name) {
  std::string s = name;
  McMethod m;
  m.name = name;
  if (s.size() > 3 && s.substr(s.size() - 3) == "adj") {
    m.adjust = true;
    s = s.substr(0, s.size() - 3);
  }
  std::string digits;
  if (s.rfind("ztest", 0) == 0) {
    m.variant = SelectionVariant::ZTest;
    digits = s.substr(5);
  } else if (s.rfind("pztest", 0) == 0) {
    m.variant = SelectionVariant::PZTest;
    digits = s.substr(6);
  } else {
    throw std::invalid_argument("unknown method label: " + name);
  }
  if (digits.size() != 2 || !isdigit(digits[0]) || !isdigit(digits[1]))
    throw std::invalid_argument("method label needs a two-digit level, e.g. ztest05: " + name);
  m.alpha = (10 * (digits[0] - '0') + (digits[1] - '0')) / 100.0;
  if (m.alpha <= 0 || m.alpha >= 1)
    throw std::invalid_argument("method level out of range: " + name);
  return m;
}

std::vector<EstimatorKind> method_estimators(const McMethod& method) {
  if (method.variant == SelectionVariant::ZTest)
    return {EstimatorKind::SW, EstimatorKind::RSW, EstimatorKind::PSW, EstimatorKind::SW_PSW,
            EstimatorKind::RSW_PSW};
  return {EstimatorKind::SW, EstimatorKind::RSW, EstimatorKind::PSW};
}

McReport run_mc(const McConfig& cfg) {
  if (cfg.methods.empty()) throw std::invalid_argument("no methods configured");
  if (cfg.reps < 1) throw std::invalid_argument("reps must be positive");
  for (const McMethod& m : cfg.methods) {
    if (m.adjust && cfg.mode == OutcomeMode::Survival)
      throw std::invalid_argument("baseline adjustment applies to mean-outcome studies");
    if (m.adjust && cfg.true_weights)
      throw std::invalid_argument(
          "true-weight mode does not support baseline-adjusted numerators");
  }

  McReport report;
  report.mode = cfg.mode;
  report.form = cfg.form;
  report.reps = cfg.reps;
  report.seed = cfg.seed;
  int K;
  {
    // The generating contrast and minimal window are deterministic in the
    // configuration; probe them with a single-subject draw.
    if (cfg.mode == OutcomeMode::Mean) {
      NormalDgpConfig probe = cfg.normal;
      probe.n = 1;
      auto [p, t] = generate_normal(probe);
      K = p.K();
      report.theta_true = t.theta_true;
      report.m_star = t.m_star;
    } else {
      SurvivalDgpConfig probe = cfg.survival;
      probe.n = 1;
      auto [p, t] = generate_survival(probe);
      K = p.K();
      report.theta_true = t.theta_true;
      report.m_star = t.m_star;
    }
  }
  int m_max = cfg.m_max >= 0 ? cfg.m_max
                             : (cfg.mode == OutcomeMode::Mean ? K : std::min(10, K));
  if (m_max < 1 || m_max > K) throw std::invalid_argument("m_max out of [1,K]");
  report.m_max = m_max;

  const int M = static_cast<int>(cfg.methods.size());
  std::vector<std::vector<EstimatorKind>> ests(M);
  std::vector<int> off(M + 1, 0);
  for (int mi = 0; mi < M; ++mi) {
    ests[mi] = method_estimators(cfg.methods[mi]);
    off[mi + 1] = off[mi] + static_cast<int>(ests[mi].size());
  }

  std::vector<RepResult> results(cfg.reps);
  run_pool(cfg.reps, cfg.threads,
           [&](int r) { results[r] = run_one(cfg, m_max, ests, off, r); });

  for (int mi = 0; mi < M; ++mi) {
    SelectionRow srow;
    srow.method = cfg.methods[mi].name;
    srow.prob.assign(m_max, 0.0);
    for (const RepResult& rr : results) {
      if (rr.selected[mi] < 1) {
        ++srow.failures;
        continue;
      }
      ++srow.n_used;
      srow.prob[rr.selected[mi] - 1] += 1.0;
    }
    if (srow.n_used > 0)
      for (double& p : srow.prob) p /= srow.n_used;
    report.selection.push_back(srow);

    for (std::size_t ei = 0; ei < ests[mi].size(); ++ei) {
      EstimateRow erow;
      erow.method = cfg.methods[mi].name;
      erow.kind = ests[mi][ei];
      double sum = 0, sum_m = 0;
      std::vector<std::pair<double, double>> vals;
      for (const RepResult& rr : results) {
        double e = rr.est[off[mi] + static_cast<int>(ei)];
        if (std::isnan(e)) continue;
        vals.push_back({e, rr.var[off[mi] + static_cast<int>(ei)]});
        sum += e;
        sum_m += rr.selected[mi];
      }
      erow.n_used = static_cast<int>(vals.size());
      erow.failures = cfg.reps - erow.n_used;
      if (!vals.empty()) {
        double mean = sum / erow.n_used;
        erow.bias = mean - report.theta_true;
        erow.mean_selected_m = sum_m / erow.n_used;
        double ss = 0;
        int covered = 0;
        for (auto& [e, v] : vals) {
          ss += (e - mean) * (e - mean);
          ConfidenceInterval ci = confidence_interval(e, v, 0.95);
          if (ci.lo <= report.theta_true && report.theta_true <= ci.hi) ++covered;
        }
        erow.se = std::sqrt(ss / erow.n_used);  // population scaling: rmse^2
        erow.rmse = std::sqrt(erow.bias * erow.bias + erow.se * erow.se);  // = bias^2+se^2
        erow.coverage = static_cast<double>(covered) / erow.n_used;
      }
      report.estimates.push_back(erow);
    }
  }
  return report;
}

std::string to_json(const McReport& report) {
  nlohmann::json j;
  j["mode"] = report.mode == OutcomeMode::Mean ? "mean" : "survival";
  j["form"] = report.form == ModelForm::Saturated ? "saturated" : "main";
  j["reps"] = report.reps;
  j["m_max"] = report.m_max;
  j["theta_true"] = report.theta_true;
  j["m_star"] = report.m_star;
  j["seed"] = report.seed;
  j["selection"] = nlohmann::json::array();
  for (const SelectionRow& s : report.selection) {
    nlohmann::json row;
    row["method"] = s.method;
    row["prob"] = s.prob;
    row["n_used"] = s.n_used;
    row["failures"] = s.failures;
    j["selection"].push_back(row);
  }
  j["estimates"] = nlohmann::json::array();
  for (const EstimateRow& e : report.estimates) {
    nlohmann::json row;
    row["method"] = e.method;
    row["estimator"] = kind_name(e.kind);
    row["bias"] = e.bias;
    row["se"] = e.se;
    row["rmse"] = e.rmse;
    row["coverage"] = e.coverage;
    row["mean_selected_m"] = e.mean_selected_m;
    row["n_used"] = e.n_used;
    row["failures"] = e.failures;
    j["estimates"].push_back(row);
  }
  return j.dump(2);
}

void write_csv(const McReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/selection.csv");
    if (!out) throw std::runtime_error("cannot write " + dir + "/selection.csv");
    out << "method,m,prob,n_used,failures\n";
    for (const SelectionRow& s : report.selection)
      for (std::size_t m = 0; m < s.prob.size(); ++m) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", s.prob[m]);
        out << s.method << "," << (m + 1) << "," << buf << "," << s.n_used << ","
            << s.failures << "\n";
      }
  }
  {
    std::ofstream out(dir + "/estimates.csv");
    if (!out) throw std::runtime_error("cannot write " + dir + "/estimates.csv");
    out << "method,estimator,bias,se,rmse,coverage,mean_selected_m,n_used,failures\n";
    for (const EstimateRow& e : report.estimates) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g", e.bias, e.se, e.rmse,
                    e.coverage, e.mean_selected_m);
      out << e.method << "," << kind_name(e.kind) << "," << buf << "," << e.n_used << ","
          << e.failures << "\n";
    }
  }
}

CalibrationResult pair_rejection_rate(const NormalDgpConfig& cfg, int m, double alpha,
                                      SelectionVariant variant, ModelForm form, int reps,
                                      std::uint64_t seed, int threads) {
  if (reps < 1) throw std::invalid_argument("reps must be positive");
  std::vector<int> outcome(reps, -1);  // 1 rejected, 0 not, -1 failed
  run_pool(reps, threads, [&](int r) {
    std::mt19937_64 rng = make_stream(seed, static_cast<std::uint64_t>(r));
    auto [panel, truth] = generate_normal(cfg, rng);
    (void)truth;
    try {
      WeightBuilder b(panel, WeightModelSpec::defaults(panel.mode()));
      WeightKind against =
          variant == SelectionVariant::ZTest ? WeightKind::SW : WeightKind::PSW;
      EstimateResult a = estimate_at(b, against, m, form);
      EstimateResult rsw = estimate_at(b, WeightKind::RSW, m, form);
      outcome[r] = pair_test(a, rsw, alpha).rejected ? 1 : 0;
    } catch (const std::runtime_error&) {
      outcome[r] = -1;
    }
  });
  CalibrationResult res;
  res.reps = reps;
  for (int v : outcome) {
    if (v < 0)
      ++res.failures;
    else
      res.rejections += v;
  }
  int used = reps - res.failures;
  res.rate = used > 0 ? static_cast<double>(res.rejections) / used : 0.0;
  return res;
}

}  // namespace pmsm
