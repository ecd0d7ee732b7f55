#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "mlate/csv.hpp"
#include "mlate/mcmc.hpp"
#include "mlate/rng.hpp"
#include "mlate/types.hpp"

using namespace mlate;

namespace reference {

// Naive term-by-term evaluation of the log posterior, written against the
// density formulas directly rather than the module's incremental caches.

double normal_lpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * z * z;
}

double bernoulli_term(double y, double a) {
  return y * a - std::log(1.0 + std::exp(a));
}

double logpost_naive(const LogisticMixedSpec& spec,
                     const Eigen::VectorXd& theta) {
  const int q = static_cast<int>(spec.design.cols());
  const int m = spec.has_re() ? spec.clusters->num_clusters() : 0;
  const Eigen::VectorXd beta = theta.head(q);
  double lp = 0.0;
  for (int i = 0; i < spec.design.rows(); ++i) {
    double a = spec.design.row(i).dot(beta);
    if (m > 0) a += theta[q + spec.clusters->assignment[i]];
    lp += bernoulli_term(spec.y[i], a);
  }
  const Eigen::VectorXd sd = spec.effective_prior_sd();
  for (int k = 0; k < q; ++k)
    if (sd[k] > 0.0) lp += normal_lpdf(beta[k], 0.0, sd[k]);
  if (m > 0) {
    const Eigen::VectorXd nu = theta.segment(q, m);
    const double lphi = theta[q + m];
    const double phi = std::exp(lphi);
    if (spec.spatial()) {
      const double lambda = std::exp(theta[q + m + 1]);
      Eigen::MatrixXd r(m, m);
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          r(a, b) = std::exp(
              -lambda * (spec.centroids->row(a) - spec.centroids->row(b))
                            .norm());
      r.diagonal().array() += spec.re_correlation.jitter;
      const Eigen::MatrixXd cov = phi * phi * r;
      lp += -0.5 * m * std::log(2.0 * std::numbers::pi) -
            0.5 * std::log(cov.determinant()) -
            0.5 * nu.dot(cov.inverse() * nu);
      // folded-normal decay prior plus the log-scale Jacobian
      const double x = lambda;
      const double mu = spec.priors.decay_prior_mean;
      const double s = spec.priors.decay_prior_sd;
      lp += std::log(std::exp(-0.5 * std::pow((x - mu) / s, 2)) +
                     std::exp(-0.5 * std::pow((x + mu) / s, 2))) -
            0.5 * std::log(2.0 * std::numbers::pi) - std::log(s);
      lp += theta[q + m + 1];
    } else {
      for (int j = 0; j < m; ++j) lp += normal_lpdf(nu[j], 0.0, phi);
    }
    if (spec.re_sd_fixed > 0.0) {
      // point mass: no scale prior, no Jacobian
    } else {
      const double s = spec.priors.re_scale_prior;
      lp += std::log(2.0 / (std::numbers::pi * s * (1.0 + (phi / s) * (phi / s))));
      lp += lphi;
    }
  }
  return lp;
}

}  // namespace reference

namespace {

// Bernoulli design with intercept and iid normal covariates; returns the
// spec with y generated from expit(design * gamma) plus optional cluster
// effects supplied by the caller.
LogisticMixedSpec make_glm(int n, const Eigen::VectorXd& gamma,
                           std::uint64_t seed) {
  RngStream rng(seed);
  const int q = static_cast<int>(gamma.size());
  LogisticMixedSpec spec;
  spec.design.resize(n, q);
  spec.design.col(0).setOnes();
  for (int k = 1; k < q; ++k)
    for (int i = 0; i < n; ++i) spec.design(i, k) = rng.normal();
  spec.names.resize(q);
  spec.names[0] = "intercept";
  for (int k = 1; k < q; ++k) spec.names[k] = "x" + std::to_string(k);
  spec.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-spec.design.row(i).dot(gamma)));
    spec.y[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  }
  return spec;
}

PosteriorSample hand_sample(const Eigen::MatrixXd& draws, int chains) {
  PosteriorSample s;
  s.draws = draws;
  s.chains = chains;
  s.names.resize(static_cast<std::size_t>(draws.cols()));
  for (Eigen::Index k = 0; k < draws.cols(); ++k)
    s.names[static_cast<std::size_t>(k)] = "p" + std::to_string(k);
  const int per = static_cast<int>(draws.rows()) / chains;
  for (int c = 0; c < chains; ++c)
    for (int i = 0; i < per; ++i) s.chain_id.push_back(c);
  return s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

TEST_CASE("normal quantile matches erfc round trip and table values") {
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.975) ==
        doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.025) ==
        doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.999) ==
        doctest::Approx(3.090232306167813).epsilon(1e-10));
  for (double p : {1e-12, 1e-8, 1e-4, 0.01, 0.2, 0.45, 0.55, 0.8, 0.99,
                   1.0 - 1e-8}) {
    const double x = normal_quantile(p);
    CHECK(normal_cdf(x) == doctest::Approx(p).epsilon(1e-9));
    // below ~1e-8 the reflected argument 1-p cannot hold enough digits for
    // the symmetry comparison to be meaningful in double precision
    if (p >= 1e-8)
      CHECK(normal_quantile(1.0 - p) == doctest::Approx(-x).epsilon(1e-9));
  }
  CHECK(std::isinf(normal_quantile(0.0)));
  CHECK(std::isinf(normal_quantile(1.0)));
}

TEST_CASE("log posterior: all-zero coefficients give N log(1/2) likelihood") {
  Eigen::VectorXd gamma(3);
  gamma << 0.3, -0.5, 0.8;
  LogisticMixedSpec spec = make_glm(37, gamma, 11);
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const double prior_at_zero =
      3.0 * (-0.5 * std::log(2.0 * std::numbers::pi) - std::log(10.0));
  CHECK(log_posterior(spec, theta) ==
        doctest::Approx(37.0 * std::log(0.5) + prior_at_zero).epsilon(1e-13));
}

TEST_CASE("log posterior: single observation contributes y*a - log(1+e^a)") {
  LogisticMixedSpec spec;
  spec.design.resize(1, 1);
  spec.design(0, 0) = 1.0;
  spec.names = {"intercept"};
  spec.y.resize(1);
  Eigen::VectorXd theta(1);
  theta << 0.7;
  for (double y : {0.0, 1.0}) {
    spec.y[0] = y;
    const double got = log_posterior(spec, theta) -
                       reference::normal_lpdf(0.7, 0.0, 10.0);
    CHECK(got ==
          doctest::Approx(y * 0.7 - std::log(1.0 + std::exp(0.7)))
              .epsilon(1e-13));
  }
}

TEST_CASE("log posterior matches term-by-term oracle, iid random effects") {
  Eigen::VectorXd gamma(2);
  gamma << 0.4, -0.7;
  LogisticMixedSpec spec = make_glm(9, gamma, 23);
  spec.clusters = build_cluster_map({3, 3, 1, 1, 1, 7, 7, 7, 3});
  Eigen::VectorXd theta(2 + 3 + 1);
  theta << 0.4, -0.7, 0.3, -0.2, 0.5, std::log(0.8);
  CHECK(log_posterior(spec, theta) ==
        doctest::Approx(reference::logpost_naive(spec, theta)).epsilon(1e-12));

  // prior scale shows up only through the half-Cauchy term
  LogisticMixedSpec wide = spec;
  wide.priors.re_scale_prior = 2.5;
  const double phi = 0.8;
  const double delta =
      half_cauchy_log_pdf(phi, 2.5) - half_cauchy_log_pdf(phi, 1.0);
  CHECK(log_posterior(wide, theta) - log_posterior(spec, theta) ==
        doctest::Approx(delta).epsilon(1e-12));
}

TEST_CASE("log posterior matches term-by-term oracle, spatial random effects") {
  Eigen::VectorXd gamma(2);
  gamma << 0.2, 0.6;
  LogisticMixedSpec spec = make_glm(12, gamma, 31);
  spec.clusters = build_cluster_map({0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3});
  spec.re_correlation.kind = CorrelationModel::Kind::exponential;
  Eigen::MatrixXd cent(4, 2);
  cent << 0.0, 0.0, 1.0, 0.2, 0.4, 1.1, 2.0, 2.0;
  spec.centroids = cent;
  spec.priors.decay_prior_mean = 1.4;
  spec.priors.decay_prior_sd = 0.9;
  Eigen::VectorXd theta(2 + 4 + 2);
  theta << 0.2, 0.6, 0.25, -0.4, 0.15, 0.05, std::log(0.6), std::log(1.1);
  CHECK(log_posterior(spec, theta) ==
        doctest::Approx(reference::logpost_naive(spec, theta)).epsilon(1e-10));
}

TEST_CASE("log posterior input validation") {
  Eigen::VectorXd gamma(2);
  gamma << 0.0, 1.0;
  LogisticMixedSpec spec = make_glm(8, gamma, 5);
  CHECK_THROWS_AS(log_posterior(spec, Eigen::VectorXd::Zero(5)),
                  std::invalid_argument);
  Eigen::VectorXd bad(2);
  bad << 0.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(log_posterior(spec, bad), std::invalid_argument);
}

TEST_CASE("two-parameter posterior means match grid quadrature within 2%") {
  Eigen::VectorXd gamma(2);
  gamma << 0.5, 1.0;
  LogisticMixedSpec spec = make_glm(80, gamma, 47);

  // Dense midpoint quadrature over a box far wider than the posterior.
  const int grid = 501;
  const double lo = -2.0, hi = 3.0;
  const double step = (hi - lo) / (grid - 1);
  double lpmax = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd lp(grid, grid);
  Eigen::VectorXd theta(2);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      theta << lo + i * step, lo + j * step;
      lp(i, j) = log_posterior(spec, theta);
      lpmax = std::max(lpmax, lp(i, j));
    }
  double mass = 0.0, m0 = 0.0, m1 = 0.0;
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      const double w = std::exp(lp(i, j) - lpmax);
      mass += w;
      m0 += w * (lo + i * step);
      m1 += w * (lo + j * step);
    }
  const double grid_b0 = m0 / mass;
  const double grid_b1 = m1 / mass;

  McmcSettings settings;
  settings.chains = 4;
  settings.iters = 9000;
  settings.warmup = 1000;
  settings.seed = 99;
  auto [draws, report] = sample(spec, settings);
  CHECK(report.pass);
  const Eigen::VectorXd means =
      posterior_point(draws, {"intercept", "x1"});
  CHECK(std::abs(means[0] - grid_b0) <= 0.02 * std::max(0.5, std::abs(grid_b0)));
  CHECK(std::abs(means[1] - grid_b1) <= 0.02 * std::max(0.5, std::abs(grid_b1)));
}

TEST_CASE("generate-then-recover: strong coefficients at n=2000") {
  Eigen::VectorXd gamma(3);
  gamma << 1.0, 1.0, 1.0;
  LogisticMixedSpec spec = make_glm(2000, gamma, 71);
  McmcSettings settings;
  settings.seed = 202;
  auto [draws, report] = sample(spec, settings);
  CHECK(report.pass);
  const Eigen::VectorXd means =
      posterior_point(draws, {"intercept", "x1", "x2"});
  for (int k = 0; k < 3; ++k) CHECK(std::abs(means[k] - 1.0) < 0.15);
  // convergence gate on default settings
  for (double r : report.rhat) CHECK(r < 1.06);
  for (double e : report.ess) CHECK(e > 50.0);
}

TEST_CASE("intercept-only, all successes: mass at large positive values") {
  LogisticMixedSpec spec;
  const int n = 50;
  spec.design = Eigen::MatrixXd::Ones(n, 1);
  spec.names = {"intercept"};
  spec.y = Eigen::VectorXd::Ones(n);
  McmcSettings settings;
  settings.seed = 7;
  auto [draws, report] = sample(spec, settings);
  const Eigen::VectorXd col = draws.draws.col(0);
  const double frac_pos =
      (col.array() > 0.0).cast<double>().mean();
  CHECK(frac_pos > 0.99);
  CHECK(posterior_point(draws, {"intercept"})[0] > 2.0);
}

TEST_CASE("sampling is seed-deterministic and chain-order independent") {
  Eigen::VectorXd gamma(2);
  gamma << 0.3, -0.6;
  LogisticMixedSpec spec = make_glm(150, gamma, 13);
  spec.clusters = build_cluster_map([] {
    std::vector<long long> ids;
    for (int i = 0; i < 150; ++i) ids.push_back(i % 6);
    return ids;
  }());

  McmcSettings settings;
  settings.iters = 400;
  settings.warmup = 100;
  settings.seed = 55;
  auto [a, ra] = sample(spec, settings);
  auto [b, rb] = sample(spec, settings);
  CHECK((a.draws - b.draws).cwiseAbs().maxCoeff() == 0.0);

  McmcSettings serial = settings;
  serial.parallel_chains = false;
  auto [c, rc] = sample(spec, serial);
  CHECK((a.draws - c.draws).cwiseAbs().maxCoeff() == 0.0);

  McmcSettings other = settings;
  other.seed = 56;
  auto [d, rd] = sample(spec, other);
  CHECK((a.draws - d.draws).cwiseAbs().maxCoeff() > 0.0);

  // names unique, chains equal length
  std::set<std::string> uniq(a.names.begin(), a.names.end());
  CHECK(uniq.size() == a.names.size());
  CHECK(std::count(a.chain_id.begin(), a.chain_id.end(), 0) ==
        std::count(a.chain_id.begin(), a.chain_id.end(), 1));
}

TEST_CASE("pinned coefficient stays at zero and is excluded from the gate") {
  Eigen::VectorXd gamma(3);
  gamma << 0.5, 0.0, 1.0;
  LogisticMixedSpec spec = make_glm(400, gamma, 83);
  spec.prior_sd = Eigen::VectorXd::Constant(3, 10.0);
  spec.prior_sd[1] = 0.0;
  McmcSettings settings;
  settings.seed = 19;
  auto [draws, report] = sample(spec, settings);
  CHECK(draws.draws.col(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(report.pass);  // constant pinned column must not fail the gate
  CHECK(std::isnan(report.rhat[1]));

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  theta[1] = 0.1;
  CHECK_THROWS_AS(log_posterior(spec, theta), std::invalid_argument);
}

TEST_CASE("random effects shrink toward zero under a small fixed scale") {
  // Strong alternating cluster effects, intercept-only fixed part.
  const int m = 8, per = 12;
  std::vector<long long> ids;
  Eigen::VectorXd truth(m);
  for (int j = 0; j < m; ++j) truth[j] = (j % 2 == 0) ? 1.2 : -1.2;
  RngStream rng(301);
  LogisticMixedSpec spec;
  spec.design = Eigen::MatrixXd::Ones(m * per, 1);
  spec.names = {"intercept"};
  spec.y.resize(m * per);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < per; ++i) {
      ids.push_back(j);
      const double p = 1.0 / (1.0 + std::exp(-truth[j]));
      spec.y[j * per + i] = rng.bernoulli(p) ? 1.0 : 0.0;
    }
  spec.clusters = build_cluster_map(ids);

  McmcSettings settings;
  settings.seed = 404;
  settings.iters = 3000;
  settings.warmup = 1000;

  std::vector<std::string> re_names;
  for (int j = 0; j < m; ++j)
    re_names.push_back("re[" + std::to_string(j) + "]");

  LogisticMixedSpec loose = spec;
  loose.re_sd_fixed = 1.0;
  auto [dl, rl] = sample(loose, settings);
  const double norm_loose = posterior_point(dl, re_names).norm();

  LogisticMixedSpec tight = spec;
  tight.re_sd_fixed = 0.05;
  auto [dt, rt] = sample(tight, settings);
  const double norm_tight = posterior_point(dt, re_names).norm();

  CHECK(norm_loose > 1.0);          // effects clearly detected
  CHECK(norm_tight < 0.3 * norm_loose);  // point mass at small scale shrinks

  // fixed scale shows up as a constant column named re_sd
  CHECK(dl.draws.col(dl.column("re_sd")).minCoeff() == 1.0);
  CHECK(dl.draws.col(dl.column("re_sd")).maxCoeff() == 1.0);
  CHECK(rl.pass);

  // fixed scale changes log_posterior bookkeeping: theta must agree
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(1 + m + 1);
  theta[1 + m] = std::log(2.0);
  CHECK_THROWS_AS(log_posterior(tight, theta), std::invalid_argument);
  theta[1 + m] = std::log(0.05);
  CHECK(std::isfinite(log_posterior(tight, theta)));
  CHECK(log_posterior(tight, theta) ==
        doctest::Approx(reference::logpost_naive(tight, theta)).epsilon(1e-12));
}

TEST_CASE("spatial model: mechanics, determinism, convergence") {
  const int m = 6, per = 20;
  RngStream rng(77);
  Eigen::MatrixXd cent(m, 2);
  for (int j = 0; j < m; ++j) {
    cent(j, 0) = rng.uniform();
    cent(j, 1) = rng.uniform();
  }
  std::vector<long long> ids;
  LogisticMixedSpec spec;
  spec.design = Eigen::MatrixXd::Ones(m * per, 1);
  spec.names = {"intercept"};
  spec.y.resize(m * per);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < per; ++i) {
      ids.push_back(j);
      spec.y[j * per + i] = rng.bernoulli(0.55) ? 1.0 : 0.0;
    }
  spec.clusters = build_cluster_map(ids);
  spec.re_correlation.kind = CorrelationModel::Kind::exponential;
  spec.centroids = cent;
  spec.priors = folded_normal_decay_prior(max_pairwise_distance(cent), 2.0);

  McmcSettings settings;
  settings.seed = 3001;
  settings.iters = 4000;
  settings.warmup = 1500;
  auto [draws, report] = sample(spec, settings);
  CHECK(draws.names.back() == "re_decay");
  CHECK(draws.names[draws.names.size() - 2] == "re_sd");
  CHECK(draws.draws.col(draws.column("re_decay")).minCoeff() > 0.0);
  CHECK(draws.draws.col(draws.column("re_sd")).minCoeff() > 0.0);
  CHECK(report.pass);

  auto [again, r2] = sample(spec, settings);
  CHECK((draws.draws - again.draws).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("split R-hat: null cases near 1, separated chains far above") {
  RngStream rng(888);
  const int len = 1000;

  Eigen::MatrixXd null_draws(2 * len, 2);
  for (Eigen::Index i = 0; i < null_draws.rows(); ++i) {
    null_draws(i, 0) = rng.normal();
    null_draws(i, 1) = rng.normal() * 3.0 + 1.0;
  }
  PosteriorSample null_s = hand_sample(null_draws, 2);
  const Eigen::VectorXd r_null = split_rhat(null_s);
  CHECK(r_null[0] > 0.99);
  CHECK(r_null[0] < 1.02);
  CHECK(r_null[1] > 0.99);
  CHECK(r_null[1] < 1.02);

  // single chain split in half, iid draws
  Eigen::MatrixXd one(2000, 1);
  for (int i = 0; i < 2000; ++i) one(i, 0) = rng.normal();
  PosteriorSample one_s = hand_sample(one, 1);
  const double r_one = split_rhat(one_s)[0];
  CHECK(r_one > 0.99);
  CHECK(r_one < 1.02);

  // gross non-mixing
  Eigen::MatrixXd sep(2 * len, 1);
  for (int i = 0; i < len; ++i) sep(i, 0) = rng.normal();
  for (int i = len; i < 2 * len; ++i) sep(i, 0) = 10.0 + rng.normal();
  PosteriorSample sep_s = hand_sample(sep, 2);
  CHECK(split_rhat(sep_s)[0] > 1.5);

  // constant chain: NaN and failed gate
  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(2 * len, 1, 4.2);
  PosteriorSample flat_s = hand_sample(flat, 2);
  CHECK(std::isnan(split_rhat(flat_s)[0]));
  const ConvergenceReport rep = convergence_report(flat_s);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("effective sample size: iid near total, sticky chain far below") {
  RngStream rng(4242);
  const int len = 2000;
  Eigen::MatrixXd draws(2 * len, 2);
  for (int c = 0; c < 2; ++c) {
    double ar = 0.0;
    for (int i = 0; i < len; ++i) {
      draws(c * len + i, 0) = rng.normal();
      ar = 0.95 * ar + std::sqrt(1.0 - 0.95 * 0.95) * rng.normal();
      draws(c * len + i, 1) = ar;
    }
  }
  PosteriorSample s = hand_sample(draws, 2);
  const Eigen::VectorXd ess = effective_sample_size(s);
  const double total = 2.0 * len;
  CHECK(ess[0] > 0.5 * total);
  CHECK(ess[0] <= total * std::log10(total) + 1.0);
  CHECK(ess[1] < 0.2 * total);
  CHECK(ess[1] > 10.0);

  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(2 * len, 1, 1.0);
  CHECK(std::isnan(effective_sample_size(hand_sample(flat, 2))[0]));
}

TEST_CASE("posterior_point matches a two-pass mean oracle") {
  RngStream rng(31337);
  Eigen::MatrixXd draws(500, 3);
  for (int i = 0; i < 500; ++i) {
    draws(i, 0) = -2.5;
    draws(i, 1) = (i % 2 == 0) ? 0.0 : 1.0;
    draws(i, 2) = rng.normal() * 7.0 + 3.0;
  }
  PosteriorSample s = hand_sample(draws, 2);
  const Eigen::VectorXd means = posterior_point(s, {"p0", "p1", "p2"});
  CHECK(means[0] == -2.5);
  CHECK(means[1] == 0.5);
  long double acc = 0.0L;
  for (int i = 0; i < 500; ++i) acc += draws(i, 2);
  CHECK(means[2] ==
        doctest::Approx(static_cast<double>(acc / 500.0L)).epsilon(1e-13));
  CHECK_THROWS_AS(posterior_point(s, {"nope"}), std::invalid_argument);
}

TEST_CASE("sampler input validation") {
  Eigen::VectorXd gamma(2);
  gamma << 0.0, 0.5;
  LogisticMixedSpec spec = make_glm(20, gamma, 1);

  McmcSettings bad;
  bad.iters = 100;
  bad.warmup = 100;
  CHECK_THROWS_AS(sample(spec, bad), std::invalid_argument);
  bad.iters = 100;
  bad.warmup = 0;
  CHECK_THROWS_AS(sample(spec, bad), std::invalid_argument);

  LogisticMixedSpec notbinary = spec;
  notbinary.y[3] = 2.0;
  McmcSettings ok;
  CHECK_THROWS_AS(sample(notbinary, ok), std::invalid_argument);

  LogisticMixedSpec nocent = spec;
  nocent.clusters = build_cluster_map(std::vector<long long>(20, 0));
  nocent.re_correlation.kind = CorrelationModel::Kind::exponential;
  CHECK_THROWS_AS(sample(nocent, ok), std::invalid_argument);

  LogisticMixedSpec mism = spec;
  mism.names = {"only_one"};
  CHECK_THROWS_AS(sample(mism, ok), std::invalid_argument);
}

TEST_CASE("draw export round-trips through the CSV layer") {
  Eigen::VectorXd gamma(2);
  gamma << 0.2, 0.4;
  LogisticMixedSpec spec = make_glm(40, gamma, 9);
  McmcSettings settings;
  settings.iters = 60;
  settings.warmup = 20;
  settings.seed = 5;
  auto [draws, report] = sample(spec, settings);

  const auto path =
      std::filesystem::temp_directory_path() / "mlate_draws_roundtrip.csv";
  export_draws(draws, path.string());
  const CsvTable table = read_csv(path);
  REQUIRE(table.header.size() == draws.names.size() + 2);
  CHECK(table.header[0] == "chain");
  CHECK(table.header[1] == "iter");
  CHECK(table.header[2] == "intercept");
  REQUIRE(static_cast<Eigen::Index>(table.rows.size()) == draws.draws.rows());
  CHECK(std::stod(table.rows[17][2]) == draws.draws(17, 0));
  CHECK(table.rows[0][0] == "0");
  CHECK(table.rows.back()[0] == "1");
  std::filesystem::remove(path);
}
