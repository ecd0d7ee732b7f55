#pragma once

#include <Eigen/Dense>

namespace mlate {

// Correlation structure for cluster-level random effects.  `independent`
// means an exchangeable N(0, phi^2 I) prior; `exponential` decays with
// pairwise centroid distance, R_jk = exp(-decay * ||s_j - s_k||).
struct CorrelationModel {
  enum class Kind { independent, exponential };
  Kind kind = Kind::independent;
  double decay = 1.0;    // initial value when the decay is sampled
  double jitter = 1e-8;  // added to the diagonal right before factorization
};

// Hyperparameters shared by the Bayesian logistic fits.
struct PriorSpec {
  double fixed_effect_sd = 10.0;  // N(0, sd^2) on each regression coefficient
  double re_scale_prior = 1.0;    // half-Cauchy scale for the random-effect SD
  double decay_prior_mean = 1.0;  // folded-normal location for the decay
  double decay_prior_sd = 1.0;
};

// R_jk = exp(-decay * ||s_j - s_k||) with exact unit diagonal.  Consumers add
// CorrelationModel::jitter to the diagonal before any Cholesky.
Eigen::MatrixXd exponential_correlation(const Eigen::MatrixXd& centroids,
                                        double decay);

double max_pairwise_distance(const Eigen::MatrixXd& centroids);

// Decay value at which correlation drops to 0.05 at half the maximum
// pairwise distance: -ln(0.05) / (max_distance / 2).
double practical_range_decay(double max_distance);

// PriorSpec with the folded-normal decay prior centered at the practical
// range; other fields keep their defaults and can be overridden afterwards.
PriorSpec folded_normal_decay_prior(double max_distance, double sd);

// log density of the folded normal |N(mean, sd^2)| at x > 0.
double folded_normal_log_pdf(double x, double mean, double sd);

// log density of the half-Cauchy with the given scale at x > 0.
double half_cauchy_log_pdf(double x, double scale);

}  // namespace mlate
