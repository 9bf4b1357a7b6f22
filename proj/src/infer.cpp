#include "pmsm/infer.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pmsm/glm.hpp"
#include "pmsm/rng.hpp"

namespace pmsm {

double variance_of_difference(const Eigen::VectorXd& influence_a,
                              const Eigen::VectorXd& influence_b) {
  if (influence_a.size() != influence_b.size())
    throw std::invalid_argument("influence vectors have different lengths");
  const double n = static_cast<double>(influence_a.size());
  return (influence_a - influence_b).squaredNorm() / (n * n);
}

PairTest pair_test(const EstimateResult& a, const EstimateResult& b, double alpha,
                   PairVariance rule) {
  if (a.m != b.m) throw std::invalid_argument("pair test: estimators use different windows");
  if (alpha <= 0 || alpha >= 1) throw std::invalid_argument("pair test: alpha out of (0,1)");
  PairTest t;
  t.m = a.m;
  t.a_kind = a.weights_used;
  t.b_kind = b.weights_used;
  t.rule = rule;
  t.alpha = alpha;
  t.difference = a.estimate - b.estimate;
  t.variance = rule == PairVariance::PairedInfluence
                   ? variance_of_difference(a.influence, b.influence)
                   : a.variance + b.variance;
  t.critical = chisq1_quantile_upper(alpha);
  if (t.variance == 0) {
    if (t.difference != 0)
      throw std::runtime_error(
          "pair test degenerate: estimators differ but the variance of the difference is zero");
    t.d = 0;
    t.p_value = 1;
    t.rejected = false;
    return t;
  }
  t.d = t.difference * t.difference / t.variance;
  t.p_value = chisq1_upper_tail(t.d);
  t.rejected = t.d > t.critical;
  return t;
}

ConfidenceInterval confidence_interval(double estimate, double variance, double level) {
  if (level <= 0 || level >= 1) throw std::invalid_argument("confidence level out of (0,1)");
  if (variance < 0) throw std::invalid_argument("negative variance");
  boost::math::normal_distribution<> z;
  double zq = boost::math::quantile(z, 0.5 + level / 2);
  double half = zq * std::sqrt(variance);
  return {estimate - half, estimate + half, level};
}

double chisq1_upper_tail(double d) {
  if (d < 0) throw std::invalid_argument("chi-squared statistic must be nonnegative");
  boost::math::chi_squared_distribution<> chi(1);
  return boost::math::cdf(boost::math::complement(chi, d));
}

double chisq1_quantile_upper(double alpha) {
  if (alpha <= 0 || alpha >= 1) throw std::invalid_argument("alpha out of (0,1)");
  boost::math::chi_squared_distribution<> chi(1);
  return boost::math::quantile(boost::math::complement(chi, alpha));
}

double bootstrap_variance_of_difference(
    const LongPanel& panel, int n_boot, std::uint64_t seed,
    const std::function<std::pair<double, double>(const LongPanel&, const std::vector<int>&)>&
        paired_estimates) {
  if (n_boot < 2) throw std::invalid_argument("bootstrap needs at least 2 replicates");
  const int n = panel.n();
  std::vector<double> diffs;
  diffs.reserve(n_boot);
  for (int b = 0; b < n_boot; ++b) {
    std::mt19937_64 gen = make_stream(seed, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = pick(gen);
    LongPanel resampled = panel.subset(ids);
    try {
      auto [ea, eb] = paired_estimates(resampled, ids);
      diffs.push_back(ea - eb);
    } catch (const EstimabilityError&) {
    } catch (const FitError&) {
    }
  }
  if (static_cast<int>(diffs.size()) * 2 <= n_boot)
    throw std::runtime_error("bootstrap failed on more than half of the replicates");
  double mean = 0;
  for (double v : diffs) mean += v;
  mean /= static_cast<double>(diffs.size());
  double ss = 0;
  for (double v : diffs) ss += (v - mean) * (v - mean);
  return ss / (static_cast<double>(diffs.size()) - 1);
}

}  // namespace pmsm
