#include "mlate/correlation.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mlate {

Eigen::MatrixXd exponential_correlation(const Eigen::MatrixXd& centroids,
                                        double decay) {
  if (centroids.cols() != 2)
    throw std::invalid_argument("exponential_correlation: centroids must be m x 2");
  if (!(decay > 0.0))
    throw std::invalid_argument("exponential_correlation: decay must be positive");
  const int m = static_cast<int>(centroids.rows());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(m, m);
  for (int j = 1; j < m; ++j) {
    for (int k = 0; k < j; ++k) {
      const double d = (centroids.row(j) - centroids.row(k)).norm();
      const double v = std::exp(-decay * d);
      r(j, k) = v;
      r(k, j) = v;
    }
  }
  return r;
}

double max_pairwise_distance(const Eigen::MatrixXd& centroids) {
  if (centroids.rows() < 2)
    throw std::invalid_argument("max_pairwise_distance: need at least two points");
  double best = 0.0;
  for (int j = 1; j < centroids.rows(); ++j)
    for (int k = 0; k < j; ++k)
      best = std::max(best, (centroids.row(j) - centroids.row(k)).norm());
  return best;
}

double practical_range_decay(double max_distance) {
  if (!(max_distance > 0.0))
    throw std::invalid_argument("practical_range_decay: max_distance must be positive");
  return -std::log(0.05) / (max_distance / 2.0);
}

PriorSpec folded_normal_decay_prior(double max_distance, double sd) {
  if (!(sd > 0.0))
    throw std::invalid_argument("folded_normal_decay_prior: sd must be positive");
  PriorSpec spec;
  spec.decay_prior_mean = practical_range_decay(max_distance);
  spec.decay_prior_sd = sd;
  return spec;
}

double folded_normal_log_pdf(double x, double mean, double sd) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  const double a = (x - mean) / sd;
  const double b = (x + mean) / sd;
  const double c = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd);
  // log(exp(-a^2/2) + exp(-b^2/2)) with the larger term factored out
  const double la = -0.5 * a * a;
  const double lb = -0.5 * b * b;
  const double hi = std::max(la, lb);
  return c + hi + std::log1p(std::exp(std::min(la, lb) - hi));
}

double half_cauchy_log_pdf(double x, double scale) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  const double z = x / scale;
  return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(z * z);
}

}  // namespace mlate
