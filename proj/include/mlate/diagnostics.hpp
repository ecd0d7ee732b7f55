#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "mlate/types.hpp"

namespace mlate {

// Standardized mean difference between exposure groups.  Continuous variant
// divides the mean difference by the pooled-SD denominator; the dichotomous
// variant replaces moments by prevalences.  Weights, when given, replace
// means and variances by their frequency-weighted equivalents (the
// (sum w)^2 - sum w^2 denominator form).  Returns NaN when the pooled
// variance is zero.
double smd(const Eigen::VectorXd& values, const Eigen::VectorXd& exposure,
           const Eigen::VectorXd* weights, bool binary_covariate);

struct SmdReport {
  std::vector<std::string> covariates;
  std::vector<bool> binary;
  Eigen::VectorXd unweighted;              // per covariate
  Eigen::MatrixXd weighted;                // covariates x weight models
  std::vector<std::string> weight_labels;  // one per weighted column
  double flag_threshold = 0.10;

  // column -1 inspects the unweighted value
  bool flagged(int covariate, int column) const;
};

// Unweighted SMDs plus one weighted column per propensity estimate, with
// inverse-probability weights w = z/ps + (1-z)/(1-ps) per unit.  Covariates
// whose observed values all lie in {0,1} use the dichotomous variant.
SmdReport balance_table(const Dataset& data,
                        const std::vector<Eigen::VectorXd>& ps_estimates,
                        const std::vector<std::string>& labels);

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct PositivitySummary {
  FiveNumber treated;
  FiveNumber control;
  double overlap_low = 0;   // max of group minima
  double overlap_high = 0;  // min of group maxima
  bool empty_overlap = false;
};

PositivitySummary positivity_summary(const Eigen::VectorXd& ps,
                                     const Eigen::VectorXd& exposure);

struct FitReport {
  double elpd_waic = 0, p_waic = 0, waic = 0;
  double elpd_loo = 0, p_loo = 0, loo = 0;
  Eigen::VectorXd pointwise_elpd_waic;
  Eigen::VectorXd pointwise_elpd_loo;
  Eigen::VectorXd pareto_k;       // per observation
  std::vector<int> high_k_points; // k-hat > 0.7, flagged not fatal
  int pareto_fallbacks = 0;       // points where truncated IS was used
};

// Watanabe-Akaike criterion from an (draws x observations) pointwise
// log-likelihood matrix.
FitReport waic(const Eigen::MatrixXd& loglik);

// Pareto-smoothed importance-sampling leave-one-out.  The generalized Pareto
// tail is fitted to the top 20% of the importance ratios per observation;
// degenerate tails fall back to truncated importance sampling.
FitReport loo(const Eigen::MatrixXd& loglik);

// Both criteria in one pass.  The streaming variant pulls one observation
// column at a time so callers never materialize the full matrix.
FitReport fit_report(const Eigen::MatrixXd& loglik);
FitReport fit_report_streaming(
    int n_obs, const std::function<Eigen::VectorXd(int)>& loglik_column);

}  // namespace mlate
