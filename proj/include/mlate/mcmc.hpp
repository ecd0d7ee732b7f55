#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mlate/correlation.hpp"
#include "mlate/types.hpp"

namespace mlate {

// Bayesian logistic regression with an optional cluster-level random
// intercept, either exchangeable or spatially correlated across cluster
// centroids.  The sampler is an adaptive Metropolis-within-Gibbs scheme:
// a preconditioned block random-walk update for the regression
// coefficients and single-site updates for the random effects and the
// (log-transformed) scale parameters.

struct McmcSettings {
  int chains = 2;
  int iters = 1500;   // per chain, including warmup
  int warmup = 500;   // dropped from the front of each chain
  std::uint64_t seed = 20240901;
  double rhat_threshold = 1.06;
  bool parallel_chains = true;

  void validate() const;
};

struct LogisticMixedSpec {
  Eigen::MatrixXd design;            // N x q, includes the intercept column
  std::vector<std::string> names;    // q coefficient labels
  Eigen::VectorXd y;                 // N, each entry 0 or 1

  // Per-coefficient prior standard deviation.  Empty means every
  // coefficient gets priors.fixed_effect_sd.  An exact zero pins the
  // coefficient at zero: it is excluded from sampling and its draws are
  // identically zero.
  Eigen::VectorXd prior_sd;

  // Random-intercept structure; absent means a plain GLM.
  std::optional<ClusterMap> clusters;
  CorrelationModel re_correlation;           // used only when clusters present
  std::optional<Eigen::MatrixXd> centroids;  // m x 2, required for exponential
  std::string re_label = "re";

  // Zero (default) samples the random-effect sd under its half-Cauchy
  // prior; a positive value replaces that prior with a point mass there,
  // so the sd is held fixed and excluded from sampling.
  double re_sd_fixed = 0.0;

  PriorSpec priors;

  void validate() const;
  bool has_re() const { return clusters.has_value(); }
  bool spatial() const {
    return has_re() &&
           re_correlation.kind == CorrelationModel::Kind::exponential;
  }
  // Total parameter count: q coefficients, then m random effects, the
  // random-effect sd, and (spatial only) the correlation decay.
  int dim() const;
  Eigen::VectorXd effective_prior_sd() const;
};

struct PosteriorSample {
  Eigen::MatrixXd draws;           // kept draws x dim(), chain-major
  std::vector<std::string> names;  // column labels
  std::vector<int> chain_id;       // chain index per row
  int chains = 0;
  int warmup_dropped = 0;

  int draws_per_chain() const {
    return chains > 0 ? static_cast<int>(draws.rows()) / chains : 0;
  }
  Eigen::Index column(const std::string& name) const;
};

struct ConvergenceReport {
  std::vector<std::string> names;
  Eigen::VectorXd rhat;
  Eigen::VectorXd ess;
  double threshold = 1.06;
  bool pass = false;
};

// Unnormalised log posterior density.  theta is laid out as
// [coefficients, random effects, log(re_sd), log(decay)] with the scale
// parameters on the log scale, Jacobians included.  Finite for every
// finite theta.  Pinned coefficients must be zero in theta.
double log_posterior(const LogisticMixedSpec& spec,
                     const Eigen::VectorXd& theta);

// Runs the sampler.  Draw columns report scale parameters on the natural
// scale ("<re_label>_sd", "<re_label>_decay").  The convergence report
// covers every sampled parameter; pinned coefficients are constant by
// construction and excluded from the pass/fail gate.
std::pair<PosteriorSample, ConvergenceReport> sample(
    const LogisticMixedSpec& spec, const McmcSettings& settings);

// Rank-normalised split R-hat, the larger of the bulk and the
// fold-at-median statistic.  A column with zero variance yields NaN.
Eigen::VectorXd split_rhat(const PosteriorSample& sample);

// Effective sample size from the combined-chain autocovariance with the
// initial-monotone-positive-sequence truncation.
Eigen::VectorXd effective_sample_size(const PosteriorSample& sample);

ConvergenceReport convergence_report(const PosteriorSample& sample,
                                     double threshold = 1.06);

// Posterior means for the named columns; throws on an unknown name.
Eigen::VectorXd posterior_point(const PosteriorSample& sample,
                                const std::vector<std::string>& names);

void export_draws(const PosteriorSample& sample, const std::string& path);

// Standard normal quantile function (rational approximation, accurate to
// about 1e-15); used by the rank normalisation.
double normal_quantile(double p);

}  // namespace mlate
