#include "mlate/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mlate {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct GroupMoments {
  double mean = 0;
  double variance = 0;  // sample variance, or weighted-frequency variance
};

GroupMoments moments(const std::vector<double>& x, const std::vector<double>& w) {
  GroupMoments out;
  if (w.empty()) {
    const double n = static_cast<double>(x.size());
    out.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0;
    for (double v : x) ss += (v - out.mean) * (v - out.mean);
    out.variance = x.size() > 1 ? ss / (n - 1.0) : 0.0;
  } else {
    double sw = 0, sw2 = 0, sx = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      sw += w[i];
      sw2 += w[i] * w[i];
      sx += w[i] * x[i];
    }
    out.mean = sx / sw;
    double ss = 0;
    for (size_t i = 0; i < x.size(); ++i)
      ss += w[i] * (x[i] - out.mean) * (x[i] - out.mean);
    const double denom = sw * sw - sw2;
    out.variance = denom > 0 ? (sw / denom) * ss : 0.0;
  }
  return out;
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v.array() - hi).exp().sum());
}

}  // namespace

double smd(const Eigen::VectorXd& values, const Eigen::VectorXd& exposure,
           const Eigen::VectorXd* weights, bool binary_covariate) {
  const auto n = values.size();
  if (exposure.size() != n) throw std::invalid_argument("smd: length mismatch");
  if (weights && weights->size() != n)
    throw std::invalid_argument("smd: weights length mismatch");
  if (weights && (weights->array() <= 0.0).any())
    throw std::invalid_argument("smd: weights must be positive");

  std::vector<double> xt, xc, wt, wc;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool treated = exposure[i] == 1.0;
    if (!treated && exposure[i] != 0.0)
      throw std::invalid_argument("smd: exposure must be 0/1");
    (treated ? xt : xc).push_back(values[i]);
    if (weights) (treated ? wt : wc).push_back((*weights)[i]);
  }
  if (xt.empty() || xc.empty())
    throw std::invalid_argument("smd: both exposure groups must be non-empty");

  const auto mt = moments(xt, wt);
  const auto mc = moments(xc, wc);
  double pooled;
  if (binary_covariate) {
    // prevalence analogue: the weighted variant substitutes the weighted
    // prevalence into p(1-p)
    pooled = (mt.mean * (1.0 - mt.mean) + mc.mean * (1.0 - mc.mean)) / 2.0;
  } else {
    pooled = (mt.variance + mc.variance) / 2.0;
  }
  if (!(pooled > 0.0)) return kNan;
  return (mt.mean - mc.mean) / std::sqrt(pooled);
}

bool SmdReport::flagged(int covariate, int column) const {
  const double d =
      column < 0 ? unweighted[covariate] : weighted(covariate, column);
  return std::isfinite(d) && std::abs(d) > flag_threshold;
}

SmdReport balance_table(const Dataset& data,
                        const std::vector<Eigen::VectorXd>& ps_estimates,
                        const std::vector<std::string>& labels) {
  data.validate();
  if (!data.exposure_is_binary())
    throw std::invalid_argument("balance_table: exposure must be binary");
  if (labels.size() != ps_estimates.size())
    throw std::invalid_argument("balance_table: one label per PS estimate");

  const int p = static_cast<int>(data.covariates.cols());
  const int k = static_cast<int>(ps_estimates.size());
  SmdReport report;
  report.covariates = data.covariate_names;
  report.unweighted.resize(p);
  report.weighted.resize(p, k);
  report.weight_labels = labels;

  std::vector<Eigen::VectorXd> weights;
  for (const auto& ps : ps_estimates) {
    if (ps.size() != data.num_units())
      throw std::invalid_argument("balance_table: PS length mismatch");
    if ((ps.array() <= 0.0).any() || (ps.array() >= 1.0).any())
      throw std::invalid_argument("balance_table: PS values must lie in (0,1)");
    weights.push_back(data.exposure.array() / ps.array() +
                      (1.0 - data.exposure.array()) / (1.0 - ps.array()));
  }

  for (int c = 0; c < p; ++c) {
    const Eigen::VectorXd col = data.covariates.col(c);
    const bool binary = (col.array() == 0.0 || col.array() == 1.0).all();
    report.binary.push_back(binary);
    report.unweighted[c] = smd(col, data.exposure, nullptr, binary);
    for (int w = 0; w < k; ++w)
      report.weighted(c, w) = smd(col, data.exposure, &weights[w], binary);
  }
  return report;
}

namespace {

FiveNumber five_number(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const auto quantile = [&x](double p) {
    const double h = p * (static_cast<double>(x.size()) - 1.0);
    const auto lo = static_cast<size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
  };
  return {x.front(), quantile(0.25), quantile(0.5), quantile(0.75), x.back()};
}

}  // namespace

PositivitySummary positivity_summary(const Eigen::VectorXd& ps,
                                     const Eigen::VectorXd& exposure) {
  if (ps.size() != exposure.size())
    throw std::invalid_argument("positivity_summary: length mismatch");
  std::vector<double> t, c;
  for (Eigen::Index i = 0; i < ps.size(); ++i)
    (exposure[i] == 1.0 ? t : c).push_back(ps[i]);
  if (t.empty() || c.empty())
    throw std::invalid_argument("positivity_summary: both groups must be non-empty");

  PositivitySummary out;
  out.treated = five_number(std::move(t));
  out.control = five_number(std::move(c));
  out.overlap_low = std::max(out.treated.min, out.control.min);
  out.overlap_high = std::min(out.treated.max, out.control.max);
  out.empty_overlap = out.overlap_low > out.overlap_high;
  return out;
}

// ---- predictive criteria ----

namespace {

struct PointLoo {
  double elpd = 0;
  double khat = 0;
  bool fallback = false;
};

// Zhang-Stephens profile-posterior fit of a generalized Pareto shape to the
// exceedances x (ascending, all > 0); returns (k, sigma).
std::pair<double, double> fit_gpd(const std::vector<double>& x) {
  const auto n = static_cast<int>(x.size());
  const double xstar = x[static_cast<size_t>(std::floor(n / 4.0 + 0.5)) - 1];
  const int grid = 30 + static_cast<int>(std::floor(std::sqrt(n)));
  std::vector<double> theta(grid), prof(grid);
  for (int j = 0; j < grid; ++j) {
    theta[j] = 1.0 / x[n - 1] +
               (1.0 - std::sqrt(grid / (j + 0.5))) / (3.0 * xstar);
    double k = 0;
    for (double v : x) k += std::log1p(-theta[j] * v);
    k /= n;
    prof[j] = n * (std::log(-theta[j] / k) - k - 1.0);
  }
  // posterior-mean theta under the profile likelihood
  double num = 0, den = 0;
  const double hi = *std::max_element(prof.begin(), prof.end());
  for (int j = 0; j < grid; ++j) {
    const double w = std::exp(prof[j] - hi);
    num += w * theta[j];
    den += w;
  }
  const double theta_hat = num / den;
  double k = 0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= n;
  const double sigma = -k / theta_hat;
  // weakly-informative shrinkage of the shape toward 0.5
  k = (n * k + 5.0) / (n + 10.0);
  return {k, sigma};
}

// Pareto-smoothed importance weights for one observation.  Log-ratios are
// the negated pointwise log-likelihoods, shifted so the largest ratio is 1;
// elpd_i = log( sum_l w_l exp(ll_l) / sum_l w_l ).
PointLoo loo_point(const Eigen::VectorXd& ll) {
  const int s = static_cast<int>(ll.size());
  Eigen::VectorXd logr = -ll;
  logr.array() -= logr.maxCoeff();

  const int tail = static_cast<int>(std::ceil(0.2 * s));
  std::vector<int> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&logr](int a, int b) { return logr[a] < logr[b]; });

  PointLoo out;
  Eigen::VectorXd logw = logr;
  const double cut = std::exp(logr[order[s - tail - 1]]);
  std::vector<double> exceed(tail);
  for (int i = 0; i < tail; ++i)
    exceed[i] = std::exp(logr[order[s - tail + i]]) - cut;

  const bool degenerate =
      tail < 5 || exceed.back() <= 1e-12 * std::max(cut, 1e-300);
  if (degenerate) {
    // truncated importance sampling: cap ratios at mean * sqrt(S)
    out.fallback = true;
    out.khat = kNan;
    const double mean_r = logr.array().exp().mean();
    const double cap = std::log(mean_r * std::sqrt(static_cast<double>(s)));
    logw = logw.array().min(cap).matrix();
  } else {
    const auto [k, sigma] = fit_gpd(exceed);
    out.khat = k;
    if (!std::isfinite(k) || !(sigma > 0)) {
      out.fallback = true;
      const double mean_r = logr.array().exp().mean();
      const double cap = std::log(mean_r * std::sqrt(static_cast<double>(s)));
      logw = logw.array().min(cap).matrix();
    } else {
      // replace the tail by expected order statistics of the fitted tail,
      // truncated at the raw maximum (which is 1 after the shift)
      for (int i = 0; i < tail; ++i) {
        const double p = (i + 0.5) / tail;
        const double q =
            std::abs(k) < 1e-12
                ? -sigma * std::log1p(-p)
                : sigma * std::expm1(-k * std::log1p(-p)) / k;
        logw[order[s - tail + i]] = std::log(std::min(cut + q, 1.0));
      }
    }
  }

  out.elpd = log_sum_exp(logw + ll) - log_sum_exp(logw);
  return out;
}

}  // namespace

FitReport fit_report_streaming(
    int n_obs, const std::function<Eigen::VectorXd(int)>& loglik_column) {
  if (n_obs <= 0) throw std::invalid_argument("fit_report: no observations");
  FitReport report;
  report.pointwise_elpd_waic.resize(n_obs);
  report.pointwise_elpd_loo.resize(n_obs);
  report.pareto_k.resize(n_obs);

  double lppd = 0;
  for (int i = 0; i < n_obs; ++i) {
    const Eigen::VectorXd col = loglik_column(i);
    if (col.size() < 2) throw std::invalid_argument("fit_report: need >= 2 draws");
    if (!col.allFinite()) throw std::invalid_argument("fit_report: non-finite log-likelihood");

    const double n_draws = static_cast<double>(col.size());
    const double lme = log_sum_exp(col) - std::log(n_draws);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / (n_draws - 1.0);
    lppd += lme;
    report.p_waic += var;
    report.pointwise_elpd_waic[i] = lme - var;

    const PointLoo pl = loo_point(col);
    report.pointwise_elpd_loo[i] = pl.elpd;
    report.pareto_k[i] = pl.khat;
    if (pl.fallback) ++report.pareto_fallbacks;
    if (std::isfinite(pl.khat) && pl.khat > 0.7) report.high_k_points.push_back(i);
  }

  report.elpd_waic = report.pointwise_elpd_waic.sum();
  report.waic = -2.0 * report.elpd_waic;
  report.elpd_loo = report.pointwise_elpd_loo.sum();
  report.loo = -2.0 * report.elpd_loo;
  report.p_loo = lppd - report.elpd_loo;
  return report;
}

FitReport fit_report(const Eigen::MatrixXd& loglik) {
  return fit_report_streaming(
      static_cast<int>(loglik.cols()),
      [&loglik](int i) -> Eigen::VectorXd { return loglik.col(i); });
}

FitReport waic(const Eigen::MatrixXd& loglik) { return fit_report(loglik); }

FitReport loo(const Eigen::MatrixXd& loglik) { return fit_report(loglik); }

}  // namespace mlate
