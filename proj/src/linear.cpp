#include "mlate/linear.hpp"

#include <cmath>
#include <stdexcept>

#include "mlate/rng.hpp"

namespace mlate {

void LinearSimConfig::validate() const {
  if (m < 2) throw std::invalid_argument("LinearSimConfig: m must be >= 2");
  if (n < 1) throw std::invalid_argument("LinearSimConfig: n must be >= 1");
  if (!(kappa > 0.0) || !(varrho > 0.0))
    throw std::invalid_argument("LinearSimConfig: noise SDs must be positive");
  if (sigma_T < 0.0 || sigma_W < 0.0)
    throw std::invalid_argument("LinearSimConfig: sigma_T and sigma_W must be >= 0");
  if (std::abs(rho_TW) > 1.0)
    throw std::invalid_argument("LinearSimConfig: |rho_TW| must be <= 1");
}

LinearModelVariant LinearModelVariant::md(int k) {
  switch (k) {
    case 1: return {false, false};
    case 2: return {true, false};
    case 3: return {false, true};
    case 4: return {true, true};
    default: throw std::invalid_argument("LinearModelVariant::md: k must be 1..4");
  }
}

// ---- structured solver ----

CompoundSymmetrySolver::CompoundSymmetrySolver(const ClusterMap& map,
                                               double cluster_var,
                                               double noise_var)
    : map_(&map), cluster_var_(cluster_var), noise_var_(noise_var) {
  if (cluster_var < 0.0 || !(noise_var > 0.0))
    throw std::invalid_argument(
        "CompoundSymmetrySolver: need cluster_var >= 0 and noise_var > 0");
}

Eigen::VectorXd CompoundSymmetrySolver::solve(const Eigen::VectorXd& v) const {
  if (v.size() != map_->num_units())
    throw std::invalid_argument("CompoundSymmetrySolver: length mismatch");
  Eigen::VectorXd out(v.size());
  for (int j = 0; j < map_->num_clusters(); ++j) {
    const auto& units = map_->members[j];
    double sum = 0.0;
    for (int i : units) sum += v[i];
    const double shrink =
        cluster_var_ * sum / (noise_var_ + cluster_var_ * units.size());
    for (int i : units) out[i] = (v[i] - shrink) / noise_var_;
  }
  return out;
}

Eigen::MatrixXd CompoundSymmetrySolver::solve_columns(const Eigen::MatrixXd& v) const {
  Eigen::MatrixXd out(v.rows(), v.cols());
  for (int c = 0; c < v.cols(); ++c) out.col(c) = solve(v.col(c));
  return out;
}

Eigen::VectorXd CompoundSymmetrySolver::cluster_gram_diagonal() const {
  const int m = map_->num_clusters();
  Eigen::VectorXd d(m);
  for (int j = 0; j < m; ++j) {
    const double nj = map_->cluster_sizes[j];
    d[j] = nj / (noise_var_ + cluster_var_ * nj);
  }
  return d;
}

// ---- data generation ----

LinearSample generate_linear(const LinearSimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngStream rng(seed);

  const int n_total = cfg.m * cfg.n;
  std::vector<long long> ids(n_total);
  for (int j = 0; j < cfg.m; ++j)
    for (int i = 0; i < cfg.n; ++i) ids[j * cfg.n + i] = j;

  LinearSample out;
  out.data.clusters = build_cluster_map(ids);
  out.data.covariates.resize(n_total, 1);
  out.data.covariate_names = {"x"};
  for (int i = 0; i < n_total; ++i) out.data.covariates(i, 0) = rng.normal();

  // T_j and W_j share the component a_j; b_j is always consumed so streams
  // stay aligned across rho values (common random numbers over the grid).
  out.T.resize(cfg.m);
  out.W.resize(cfg.m);
  const double rho = cfg.rho_TW;
  const double resid = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (int j = 0; j < cfg.m; ++j) {
    const double a = rng.normal();
    const double b = rng.normal();
    out.T[j] = cfg.mu_T + cfg.sigma_T * a;
    out.W[j] = cfg.mu_W + cfg.sigma_W * (rho * a + resid * b);
  }

  out.data.exposure.resize(n_total);
  out.data.outcome.resize(n_total);
  const auto& x = out.data.covariates;
  for (int i = 0; i < n_total; ++i) {
    const int j = out.data.clusters.assignment[i];
    out.data.exposure[i] =
        cfg.alpha0 + cfg.alpha_x * x(i, 0) + out.T[j] + cfg.varrho * rng.normal();
  }
  for (int i = 0; i < n_total; ++i) {
    const int j = out.data.clusters.assignment[i];
    out.data.outcome[i] = cfg.beta_z * out.data.exposure[i] +
                          cfg.beta_x * x(i, 0) + out.W[j] +
                          cfg.kappa * rng.normal();
  }
  return out;
}

// ---- balancing scores ----

static void check_rank(const Eigen::MatrixXd& design, const char* who) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[sv.size() - 1] <= 1e-10 * sv[0])
    throw std::invalid_argument(std::string(who) + ": design matrix is rank deficient");
}

static Eigen::MatrixXd exposure_design(const Dataset& data) {
  Eigen::MatrixXd xt(data.num_units(), 2);
  xt.col(0).setOnes();
  xt.col(1) = data.covariates.col(0);
  return xt;
}

Eigen::VectorXd balancing_score_fixed(const Dataset& data) {
  data.validate();
  const Eigen::MatrixXd xt = exposure_design(data);
  check_rank(xt, "balancing_score_fixed");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xt);
  return xt * qr.solve(data.exposure);
}

MixedScore balancing_score_mixed(const Dataset& data, double sigma_T,
                                 double varrho) {
  data.validate();
  if (sigma_T < 0.0) throw std::invalid_argument("balancing_score_mixed: sigma_T < 0");
  if (!(varrho > 0.0)) throw std::invalid_argument("balancing_score_mixed: varrho <= 0");
  const Eigen::MatrixXd xt = exposure_design(data);
  check_rank(xt, "balancing_score_mixed");

  const CompoundSymmetrySolver sigma_zx(data.clusters, sigma_T * sigma_T,
                                        varrho * varrho);
  const Eigen::MatrixXd siginv_x = sigma_zx.solve_columns(xt);
  const Eigen::Matrix2d gram = xt.transpose() * siginv_x;
  MixedScore score;
  score.alpha = gram.ldlt().solve(siginv_x.transpose() * data.exposure);

  const Eigen::VectorXd resid =
      data.exposure - score.alpha[0] * Eigen::VectorXd::Ones(data.num_units()) -
      score.alpha[1] * data.covariates.col(0);
  // nu-hat = sigma_T^2 A' (sigma_T^2 AA' + varrho^2 I)^{-1} resid
  score.nu = sigma_T * sigma_T * data.clusters.cluster_sums(sigma_zx.solve(resid));
  score.bs = score.alpha[0] * Eigen::VectorXd::Ones(data.num_units()) +
             score.alpha[1] * data.covariates.col(0) +
             data.clusters.expand(score.nu);
  return score;
}

// ---- conditional moments and exact bias ----

ConditionalMomentsY conditional_moments_Y(const LinearSimConfig& cfg,
                                          const Dataset& data) {
  data.validate();
  const int n_total = data.num_units();
  if (data.clusters.num_clusters() < 1 || data.covariates.cols() != 1)
    throw std::invalid_argument("conditional_moments_Y: expects one covariate column");

  const CompoundSymmetrySolver sigma_zx(data.clusters, cfg.sigma_T * cfg.sigma_T,
                                        cfg.varrho * cfg.varrho);
  const Eigen::VectorXd x = data.covariates.col(0);
  const Eigen::VectorXd r =
      data.exposure -
      Eigen::VectorXd::Constant(n_total, cfg.alpha0 + cfg.mu_T) -
      cfg.alpha_x * x;

  ConditionalMomentsY mom;
  const double cross = cfg.rho_TW * cfg.sigma_T * cfg.sigma_W;
  mom.mean = cfg.beta_z * data.exposure + cfg.beta_x * x +
             Eigen::VectorXd::Constant(n_total, cfg.mu_W) +
             cross * data.clusters.expand(
                         data.clusters.cluster_sums(sigma_zx.solve(r)));

  // Var(W|Z,X) = sigma_W^2 (I_m - rho^2 sigma_T^2 A' Sigma_{Z|X}^{-1} A) is
  // diagonal because A' Sigma^{-1} A is; spread it back to unit level.
  const Eigen::VectorXd gram = sigma_zx.cluster_gram_diagonal();
  const double rho2t2 = cfg.rho_TW * cfg.rho_TW * cfg.sigma_T * cfg.sigma_T;
  Eigen::VectorXd w_var =
      cfg.sigma_W * cfg.sigma_W * (1.0 - rho2t2 * gram.array()).matrix();

  mom.cov = Eigen::MatrixXd::Zero(n_total, n_total);
  for (int j = 0; j < data.clusters.num_clusters(); ++j)
    for (int a : data.clusters.members[j])
      for (int b : data.clusters.members[j]) mom.cov(a, b) = w_var[j];
  mom.cov.diagonal().array() += cfg.kappa * cfg.kappa;
  return mom;
}

EstimatorReport fit_linear_outcome(const Dataset& data,
                                   const Eigen::VectorXd& bs,
                                   LinearModelVariant variant,
                                   const LinearSimConfig& cfg) {
  data.validate();
  const int n_total = data.num_units();
  if (bs.size() != n_total)
    throw std::invalid_argument("fit_linear_outcome: balancing score length mismatch");

  const int k = cfg.zero_intercept_outcome ? 2 : 3;
  Eigen::MatrixXd h(n_total, k);
  int col = 0;
  if (!cfg.zero_intercept_outcome) h.col(col++).setOnes();
  const int z_index = col;
  h.col(col++) = data.exposure;
  h.col(col) = bs;
  check_rank(h, "fit_linear_outcome");

  EstimatorReport report;
  report.z_index = z_index;
  if (variant.outcome_re) {
    const CompoundSymmetrySolver sigma(data.clusters, cfg.sigma_W * cfg.sigma_W,
                                       cfg.kappa * cfg.kappa);
    const Eigen::MatrixXd siginv_h = sigma.solve_columns(h);
    const Eigen::MatrixXd gram = h.transpose() * siginv_h;
    report.G = gram.ldlt().solve(siginv_h.transpose());
  } else {
    const Eigen::MatrixXd gram = h.transpose() * h;
    report.G = gram.ldlt().solve(h.transpose());
  }
  report.beta_hat = report.G * data.outcome;
  report.bias_Z = std::numeric_limits<double>::quiet_NaN();
  report.var_Z = std::numeric_limits<double>::quiet_NaN();
  return report;
}

BiasVariance theoretical_bias_variance(EstimatorReport& report,
                                       const LinearSimConfig& cfg,
                                       const Dataset& data) {
  const int n_total = data.num_units();
  if (report.G.cols() != n_total)
    throw std::invalid_argument("theoretical_bias_variance: G does not match dataset");

  const CompoundSymmetrySolver sigma_zx(data.clusters, cfg.sigma_T * cfg.sigma_T,
                                        cfg.varrho * cfg.varrho);
  const Eigen::VectorXd x = data.covariates.col(0);
  const Eigen::VectorXd r =
      data.exposure -
      Eigen::VectorXd::Constant(n_total, cfg.alpha0 + cfg.mu_T) -
      cfg.alpha_x * x;
  const double cross = cfg.rho_TW * cfg.sigma_T * cfg.sigma_W;

  // The mu_W term drops out whenever the design has an intercept (G 1 = e_0)
  // but matters for the zero-intercept variant.
  const Eigen::VectorXd drift =
      cfg.beta_x * x + Eigen::VectorXd::Constant(n_total, cfg.mu_W) +
      cross * data.clusters.expand(data.clusters.cluster_sums(sigma_zx.solve(r)));

  BiasVariance bv;
  bv.bias_Z = (report.G * drift)(report.z_index);

  // Var(Y|Z,X) = kappa^2 I + sigma_W^2 A M A' with diagonal M, so the
  // quadratic form reduces to two small products.
  const Eigen::VectorXd gram = sigma_zx.cluster_gram_diagonal();
  const double rho2t2 = cfg.rho_TW * cfg.rho_TW * cfg.sigma_T * cfg.sigma_T;
  const Eigen::VectorXd m_diag = (1.0 - rho2t2 * gram.array()).matrix();

  const Eigen::VectorXd g_z = report.G.row(report.z_index).transpose();
  const Eigen::VectorXd ga = data.clusters.cluster_sums(g_z);
  bv.var_Z = cfg.kappa * cfg.kappa * g_z.squaredNorm() +
             cfg.sigma_W * cfg.sigma_W *
                 (ga.array().square() * m_diag.array()).sum();

  report.bias_Z = bv.bias_Z;
  report.var_Z = bv.var_Z;
  return bv;
}

}  // namespace mlate
