#include "mlate/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

namespace mlate {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Each chain is split in half; columns of the result are the 2*chains
// sub-sequences.  An odd-length chain drops its middle draw.
Eigen::MatrixXd split_sequences(const PosteriorSample& sample,
                                Eigen::Index col) {
  const int chains = sample.chains;
  const int len = sample.draws_per_chain();
  const int half = len / 2;
  Eigen::MatrixXd seq(half, 2 * chains);
  for (int c = 0; c < chains; ++c) {
    const Eigen::Index base = static_cast<Eigen::Index>(c) * len;
    for (int i = 0; i < half; ++i) {
      seq(i, 2 * c) = sample.draws(base + i, col);
      seq(i, 2 * c + 1) = sample.draws(base + len - half + i, col);
    }
  }
  return seq;
}

// Potential scale reduction factor on already-transformed sequences.
double rhat_basic(const Eigen::MatrixXd& seq) {
  const Eigen::Index n = seq.rows();
  const Eigen::Index m = seq.cols();
  if (n < 2 || m < 2) return kNan;
  Eigen::VectorXd means(m), vars(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    means[j] = seq.col(j).mean();
    vars[j] = (seq.col(j).array() - means[j]).square().sum() /
              static_cast<double>(n - 1);
  }
  const double w = vars.mean();
  const double grand = means.mean();
  const double b = static_cast<double>(n) *
                   (means.array() - grand).square().sum() /
                   static_cast<double>(m - 1);
  if (!(w > 0.0) || !std::isfinite(w)) return kNan;
  const double var_plus =
      (static_cast<double>(n - 1) / n) * w + b / static_cast<double>(n);
  return std::sqrt(var_plus / w);
}

double pooled_median(const Eigen::MatrixXd& seq) {
  std::vector<double> v(seq.data(), seq.data() + seq.size());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 0) {
    double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
  }
  return hi;
}

// Replaces entries with normal scores of their pooled fractional ranks,
// averaging ranks across ties.
Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& seq) {
  const Eigen::Index total = seq.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const double* data = seq.data();
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     return data[a] < data[b];
                   });
  Eigen::MatrixXd out(seq.rows(), seq.cols());
  double* odata = out.data();
  Eigen::Index i = 0;
  while (i < total) {
    Eigen::Index j = i;
    while (j + 1 < total && data[order[j + 1]] == data[order[i]]) ++j;
    // ranks i+1 .. j+1 share the average rank
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double z = normal_quantile((rank - 0.375) /
                                     (static_cast<double>(total) + 0.25));
    for (Eigen::Index k = i; k <= j; ++k) odata[order[k]] = z;
    i = j + 1;
  }
  return out;
}

double rank_rhat_column(const PosteriorSample& sample, Eigen::Index col) {
  Eigen::MatrixXd seq = split_sequences(sample, col);
  if (seq.rows() < 2 || seq.cols() < 2) return kNan;
  if (!seq.allFinite()) return kNan;
  if ((seq.array() == seq(0, 0)).all()) return kNan;  // constant column
  const double bulk = rhat_basic(rank_normalize(seq));
  const double med = pooled_median(seq);
  Eigen::MatrixXd folded = (seq.array() - med).abs().matrix();
  const double tail = rhat_basic(rank_normalize(folded));
  if (std::isnan(bulk) || std::isnan(tail)) return kNan;
  return std::max(bulk, tail);
}

double ess_column(const PosteriorSample& sample, Eigen::Index col) {
  const Eigen::MatrixXd seq = split_sequences(sample, col);
  const Eigen::Index n = seq.rows();
  const Eigen::Index m = seq.cols();
  if (n < 4 || m < 2) return kNan;
  Eigen::VectorXd means(m), vars(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    means[j] = seq.col(j).mean();
    vars[j] = (seq.col(j).array() - means[j]).square().sum() /
              static_cast<double>(n - 1);
  }
  const double w = vars.mean();
  if (!(w > 0.0) || !std::isfinite(w)) return kNan;
  const double grand = means.mean();
  const double b = static_cast<double>(n) *
                   (means.array() - grand).square().sum() /
                   static_cast<double>(m - 1);
  const double var_plus =
      (static_cast<double>(n - 1) / n) * w + b / static_cast<double>(n);
  if (!(var_plus > 0.0)) return kNan;

  // Variogram-based autocorrelation with Geyer's initial monotone
  // positive-pair truncation.
  auto rho = [&](Eigen::Index t) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      acc += (seq.col(j).tail(n - t) - seq.col(j).head(n - t)).squaredNorm();
    const double vt = acc / (static_cast<double>(m) *
                             static_cast<double>(n - t));
    return 1.0 - vt / (2.0 * var_plus);
  };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    const double rho_even = (k == 0) ? 1.0 : rho(2 * k);
    const double rho_odd = rho(2 * k + 1);
    double pair = rho_even + rho_odd;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  const double total = static_cast<double>(n) * static_cast<double>(m);
  const double cap = total * std::log10(total);
  tau = std::max(tau, total / cap);
  return std::min(total / tau, cap);
}

}  // namespace

double normal_quantile(double p) {
  // Wichura's algorithm AS 241 (PPND16).
  if (std::isnan(p)) return kNan;
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
            1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    x = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    x = num / den;
  }
  return (q < 0.0) ? -x : x;
}

Eigen::VectorXd split_rhat(const PosteriorSample& sample) {
  const Eigen::Index d = sample.draws.cols();
  Eigen::VectorXd out(d);
  for (Eigen::Index j = 0; j < d; ++j) out[j] = rank_rhat_column(sample, j);
  return out;
}

Eigen::VectorXd effective_sample_size(const PosteriorSample& sample) {
  const Eigen::Index d = sample.draws.cols();
  Eigen::VectorXd out(d);
  for (Eigen::Index j = 0; j < d; ++j) out[j] = ess_column(sample, j);
  return out;
}

ConvergenceReport convergence_report(const PosteriorSample& sample,
                                     double threshold) {
  ConvergenceReport report;
  report.names = sample.names;
  report.rhat = split_rhat(sample);
  report.ess = effective_sample_size(sample);
  report.threshold = threshold;
  report.pass = report.rhat.size() > 0;
  for (Eigen::Index j = 0; j < report.rhat.size(); ++j) {
    if (!std::isfinite(report.rhat[j]) || report.rhat[j] >= threshold) {
      report.pass = false;
      break;
    }
  }
  return report;
}

}  // namespace mlate
