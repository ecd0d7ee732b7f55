#pragma once

#include <Eigen/Dense>

#include "mlate/types.hpp"

namespace mlate {

// Configuration of the tractable Gaussian study: a continuous exposure and
// outcome driven by an individual covariate X and a pair of cluster-level
// covariates (T, W) with known variances and cross-correlation.
//   Z_ji = alpha0 + alpha_x X_ji + T_j + eps,   eps ~ N(0, varrho^2)
//   Y_ji = beta_z Z_ji + beta_x X_ji + W_j + eps', eps' ~ N(0, kappa^2)
struct LinearSimConfig {
  int m = 50;  // clusters
  int n = 5;   // units per cluster (balanced)
  double alpha0 = 1.0;
  double alpha_x = 1.0;
  double beta_z = 1.0;
  double beta_x = 1.0;
  double kappa = 1.0;   // outcome noise SD, assumed known
  double varrho = 1.0;  // exposure noise SD, assumed known
  double sigma_T = 1.0;
  double sigma_W = 1.0;
  double rho_TW = 0.0;
  double mu_T = 0.0;
  double mu_W = 0.0;
  // When set the outcome design is [Z | BS] instead of [1 | Z | BS].
  bool zero_intercept_outcome = false;

  // kappa and varrho must be strictly positive; sigma_T and sigma_W may be
  // zero so degenerate limits (GLS = OLS, BLUP -> 0) stay expressible.
  void validate() const;
};

// Which model of the 2x2 grid is being fitted: a cluster effect in the
// exposure model changes the balancing score, one in the outcome model
// changes OLS to GLS.
struct LinearModelVariant {
  bool exposure_re = false;
  bool outcome_re = false;

  // MD1 = neither, MD2 = exposure only, MD3 = outcome only, MD4 = both.
  static LinearModelVariant md(int k);
};

struct LinearSample {
  Dataset data;       // exposure Z, outcome Y, single covariate column X
  Eigen::VectorXd T;  // latent cluster covariates, kept for oracle tests
  Eigen::VectorXd W;
};

struct MixedScore {
  Eigen::VectorXd bs;     // N fitted balancing score
  Eigen::Vector2d alpha;  // GLS intercept and slope
  Eigen::VectorXd nu;     // m shrunken cluster effects
};

struct ConditionalMomentsY {
  Eigen::VectorXd mean;  // N
  Eigen::MatrixXd cov;   // N x N, dense; intended for small instances
};

struct EstimatorReport {
  Eigen::MatrixXd G;        // k x N with beta_hat = G * Y
  Eigen::VectorXd beta_hat; // (beta0, beta_z, beta_b), or (beta_z, beta_b)
  int z_index = 1;          // row of G holding the exposure coefficient
  double bias_Z = 0.0;      // filled by theoretical_bias_variance
  double var_Z = 0.0;
};

// Solves (cluster_var * A A' + noise_var * I) x = v in O(N) per column by
// exploiting the per-cluster compound-symmetry blocks.  Agrees with a dense
// factorization to near machine precision (covered by tests).
class CompoundSymmetrySolver {
 public:
  CompoundSymmetrySolver(const ClusterMap& map, double cluster_var,
                         double noise_var);
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd solve_columns(const Eigen::MatrixXd& v) const;
  // diag(A' Sigma^{-1} A), entries n_j / (noise_var + n_j * cluster_var)
  Eigen::VectorXd cluster_gram_diagonal() const;

 private:
  const ClusterMap* map_;
  double cluster_var_;
  double noise_var_;
};

LinearSample generate_linear(const LinearSimConfig& cfg, std::uint64_t seed);

// OLS fitted values of Z on [1 | X].
Eigen::VectorXd balancing_score_fixed(const Dataset& data);

// GLS fit of Z on [1 | X] under Var(Z|X) = sigma_T^2 A A' + varrho^2 I, then
// the shrunken cluster-effect predictor applied to the GLS residuals.
MixedScore balancing_score_mixed(const Dataset& data, double sigma_T,
                                 double varrho = 1.0);

// Exact mean and covariance of Y given the realized (Z, X).
ConditionalMomentsY conditional_moments_Y(const LinearSimConfig& cfg,
                                          const Dataset& data);

// Fits the outcome regression on [1 | Z | bs] (or [Z | bs]); OLS without an
// outcome cluster effect, GLS with Sigma = sigma_W^2 A A' + kappa^2 I when
// variant.outcome_re is set.  bias_Z / var_Z are left unset.
EstimatorReport fit_linear_outcome(const Dataset& data,
                                   const Eigen::VectorXd& bs,
                                   LinearModelVariant variant,
                                   const LinearSimConfig& cfg);

struct BiasVariance {
  double bias_Z = 0.0;
  double var_Z = 0.0;
};

// Exact conditional bias and variance of the fitted exposure coefficient
// given (Z, X), using the projection matrix from the fit.  Also stores the
// pair on the report.
BiasVariance theoretical_bias_variance(EstimatorReport& report,
                                       const LinearSimConfig& cfg,
                                       const Dataset& data);

}  // namespace mlate
