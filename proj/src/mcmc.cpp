#include "mlate/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "mlate/csv.hpp"
#include "mlate/rng.hpp"

namespace mlate {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr std::uint64_t kChainTag = 0x6d636d63u;  // stream namespace for chains

double softplus(double a) {
  return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a)));
}

double bernoulli_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    acc += y[i] * eta[i] - softplus(eta[i]);
  return acc;
}

Eigen::VectorXd expit(const Eigen::VectorXd& eta) {
  return (1.0 / (1.0 + (-eta.array()).exp())).matrix();
}

// Shared, deterministic pre-pass: ridge-penalised IRLS mode for the free
// coefficients and the Cholesky factor of the penalised Fisher information,
// used to precondition the block proposal and to centre the chain inits.
struct Preconditioner {
  std::vector<int> free_idx;
  Eigen::MatrixXd design_free;  // N x q_free
  Eigen::VectorXd beta_mode;    // q (pinned entries zero)
  Eigen::LLT<Eigen::MatrixXd> fisher_llt;  // penalised Fisher at the mode
};

Preconditioner build_preconditioner(const LogisticMixedSpec& spec) {
  Preconditioner pre;
  const Eigen::VectorXd sd = spec.effective_prior_sd();
  for (int k = 0; k < spec.design.cols(); ++k)
    if (sd[k] > 0.0) pre.free_idx.push_back(k);
  const int qf = static_cast<int>(pre.free_idx.size());
  pre.beta_mode = Eigen::VectorXd::Zero(spec.design.cols());
  if (qf == 0) return pre;

  pre.design_free.resize(spec.design.rows(), qf);
  Eigen::VectorXd prior_prec(qf);
  for (int k = 0; k < qf; ++k) {
    pre.design_free.col(k) = spec.design.col(pre.free_idx[k]);
    prior_prec[k] = 1.0 / (sd[pre.free_idx[k]] * sd[pre.free_idx[k]]);
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(qf);
  Eigen::MatrixXd hess(qf, qf);
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd eta = pre.design_free * beta;
    const Eigen::VectorXd p = expit(eta);
    const Eigen::VectorXd w =
        (p.array() * (1.0 - p.array()) + 1e-6).matrix();
    hess = pre.design_free.transpose() * w.asDiagonal() * pre.design_free;
    hess.diagonal() += prior_prec;
    const Eigen::VectorXd grad =
        pre.design_free.transpose() * (spec.y - p) -
        prior_prec.asDiagonal() * beta;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) {
      beta.setZero();
      break;
    }
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  if (!beta.allFinite()) beta.setZero();
  const Eigen::VectorXd p = expit(pre.design_free * beta);
  const Eigen::VectorXd w = (p.array() * (1.0 - p.array()) + 1e-6).matrix();
  hess = pre.design_free.transpose() * w.asDiagonal() * pre.design_free;
  hess.diagonal() += prior_prec;
  pre.fisher_llt.compute(hess);
  if (pre.fisher_llt.info() != Eigen::Success) {
    hess.setIdentity(qf, qf);
    pre.fisher_llt.compute(hess);
  }
  for (int k = 0; k < qf; ++k) pre.beta_mode[pre.free_idx[k]] = beta[k];
  return pre;
}

// Robbins-Monro step for a log proposal scale, active during warmup only.
void adapt_scale(double& log_scale, double accept_prob, double target,
                 int iter) {
  const double gamma = std::pow(static_cast<double>(iter + 1), -0.6);
  log_scale += gamma * (accept_prob - target);
  log_scale = std::clamp(log_scale, -12.0, 12.0);
}

struct ChainState {
  Eigen::VectorXd beta;  // q, pinned entries stay zero
  Eigen::VectorXd nu;    // m
  double lphi = 0.0;
  double llam = 0.0;

  Eigen::VectorXd eta;  // N
  double loglik = 0.0;

  // Random-effect prior caches.  For exchangeable effects q_mat is the
  // identity conceptually; we keep g = nu and quad = |nu|^2 without storing
  // it.  For spatial effects q_mat is the inverse of R(lambda) + jitter.
  Eigen::MatrixXd q_mat;
  Eigen::VectorXd g;  // q_mat * nu
  double quad = 0.0;
  double logdet = 0.0;
};

void run_chain(const LogisticMixedSpec& spec, const Preconditioner& pre,
               const McmcSettings& settings, int chain,
               Eigen::Ref<Eigen::MatrixXd> out) {
  const int q = static_cast<int>(spec.design.cols());
  const int qf = static_cast<int>(pre.free_idx.size());
  const int m = spec.has_re() ? spec.clusters->num_clusters() : 0;
  const bool spatial = spec.spatial();
  const double jitter = spec.re_correlation.jitter;
  const Eigen::VectorXd prior_sd = spec.effective_prior_sd();
  RngStream rng = RngStream::derive(settings.seed, {kChainTag,
                                                    static_cast<std::uint64_t>(chain)});

  ChainState st;
  st.beta = pre.beta_mode;
  if (qf > 0) {
    Eigen::VectorXd z(qf);
    for (int k = 0; k < qf; ++k) z[k] = rng.normal();
    const Eigen::VectorXd jolt = pre.fisher_llt.matrixU().solve(z);
    for (int k = 0; k < qf; ++k) st.beta[pre.free_idx[k]] += 0.5 * jolt[k];
  }
  if (m > 0) {
    st.nu.resize(m);
    for (int j = 0; j < m; ++j) st.nu[j] = 0.1 * rng.normal();
    st.lphi = (spec.re_sd_fixed > 0.0)
                  ? std::log(spec.re_sd_fixed)
                  : std::log(0.5) + 0.3 * rng.normal();
    if (spatial)
      st.llam = std::log(spec.priors.decay_prior_mean) + 0.3 * rng.normal();
  }

  st.eta = spec.design * st.beta;
  if (m > 0) st.eta += spec.clusters->expand(st.nu);
  st.loglik = bernoulli_loglik(spec.y, st.eta);

  auto refresh_spatial = [&](double llam) {
    const Eigen::MatrixXd r =
        exponential_correlation(*spec.centroids, std::exp(llam)) +
        jitter * Eigen::MatrixXd::Identity(m, m);
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("mcmc: spatial correlation factorization failed");
    st.logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    st.q_mat = llt.solve(Eigen::MatrixXd::Identity(m, m));
    st.g = st.q_mat * st.nu;
    st.quad = st.nu.dot(st.g);
  };
  if (m > 0) {
    if (spatial) {
      refresh_spatial(st.llam);
    } else {
      st.g = st.nu;
      st.quad = st.nu.squaredNorm();
    }
  }

  // Proposal scales.
  double log_cb = (qf > 0) ? std::log(2.38 / std::sqrt(static_cast<double>(qf)))
                           : 0.0;
  Eigen::VectorXd log_site = Eigen::VectorXd::Zero(std::max(m, 1));
  double log_sphi = std::log(0.5);
  double log_sphi_white = std::log(0.5);
  double log_slam = std::log(0.5);
  const double block_target = (qf == 1) ? 0.44 : 0.234;
  Eigen::VectorXd eta_prop(st.eta.size());

  // Free design columns that are constant within every cluster (intercept,
  // cluster-level covariates) share flat ridges with the random effects that
  // single-site updates cannot cross.  The translation interweaving below
  // moves along an orthonormalised basis of that column space so that
  // near-collinear cluster-level columns (e.g. an intercept plus a
  // small-range covariate) still get one direction with large steps.
  struct TranslateDir {
    Eigen::VectorXd u;  // m, orthonormal; the shift applied to -nu
    std::vector<std::pair<int, double>> w;  // design column, coefficient
  };
  std::vector<TranslateDir> trans_dirs;
  if (m > 0) {
    std::vector<int> cc_cols;
    std::vector<Eigen::VectorXd> cc_vals;
    for (int k = 0; k < q; ++k) {
      if (!(prior_sd[k] > 0.0)) continue;
      Eigen::VectorXd v(m);
      bool cluster_constant = true;
      for (int j = 0; j < m && cluster_constant; ++j) {
        const auto& members = spec.clusters->members[j];
        const double first = spec.design(members.front(), k);
        for (const int i : members)
          if (spec.design(i, k) != first) {
            cluster_constant = false;
            break;
          }
        v[j] = first;
      }
      if (cluster_constant && v.cwiseAbs().maxCoeff() > 0.0) {
        cc_cols.push_back(k);
        cc_vals.push_back(std::move(v));
      }
    }
    if (!cc_cols.empty()) {
      const int kc = static_cast<int>(cc_cols.size());
      Eigen::MatrixXd vmat(m, kc);
      for (int l = 0; l < kc; ++l)
        vmat.col(l) = cc_vals[static_cast<std::size_t>(l)];
      const Eigen::HouseholderQR<Eigen::MatrixXd> qr(vmat);
      const Eigen::MatrixXd thin_q =
          qr.householderQ() * Eigen::MatrixXd::Identity(m, kc);
      const Eigen::MatrixXd r_mat =
          qr.matrixQR().topRows(kc).triangularView<Eigen::Upper>();
      for (int l = 0; l < kc; ++l) {
        // vmat * w = u_l with w = R^-1 e_l; degenerate columns are skipped
        if (std::abs(r_mat(l, l)) < 1e-9 * std::sqrt(static_cast<double>(m)))
          continue;
        Eigen::VectorXd e = Eigen::VectorXd::Zero(l + 1);
        e[l] = 1.0;
        const Eigen::VectorXd w =
            r_mat.topLeftCorner(l + 1, l + 1)
                .triangularView<Eigen::Upper>()
                .solve(e);
        TranslateDir dir;
        dir.u = thin_q.col(l);
        for (int i = 0; i <= l; ++i)
          dir.w.emplace_back(cc_cols[static_cast<std::size_t>(i)], w[i]);
        trans_dirs.push_back(std::move(dir));
      }
    }
  }
  Eigen::VectorXd log_sloc = Eigen::VectorXd::Constant(
      std::max<std::size_t>(trans_dirs.size(), 1), std::log(0.5));

  // Cluster means of the free design columns, used by the compensated block
  // move: when a column is strongly cluster-correlated (an exposure under
  // cluster-level confounding, say) its coefficient and the random effects
  // form a soft ridge that plain conditional updates walk very slowly.
  Eigen::MatrixXd cmean_free;
  if (m > 0 && qf > 0) {
    cmean_free.resize(m, qf);
    for (int j = 0; j < m; ++j) {
      const auto& members = spec.clusters->members[j];
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(qf);
      for (const int i : members) acc += pre.design_free.row(i);
      cmean_free.row(j) = acc / static_cast<double>(members.size());
    }
  }
  double log_ccomp = log_cb;

  for (int t = 0; t < settings.iters; ++t) {
    const bool adapting = t < settings.warmup;

    if (qf > 0) {
      Eigen::VectorXd z(qf);
      for (int k = 0; k < qf; ++k) z[k] = rng.normal();
      const Eigen::VectorXd delta =
          std::exp(log_cb) * pre.fisher_llt.matrixU().solve(z);
      eta_prop = st.eta + pre.design_free * delta;
      const double ll_prop = bernoulli_loglik(spec.y, eta_prop);
      double dprior = 0.0;
      for (int k = 0; k < qf; ++k) {
        const int col = pre.free_idx[k];
        const double sd = prior_sd[col];
        const double b0 = st.beta[col];
        const double b1 = b0 + delta[k];
        dprior += 0.5 * (b0 * b0 - b1 * b1) / (sd * sd);
      }
      const double diff = ll_prop - st.loglik + dprior;
      const double alpha = std::min(1.0, std::exp(std::min(diff, 0.0)));
      if (std::log(rng.uniform_pos()) < diff) {
        for (int k = 0; k < qf; ++k) st.beta[pre.free_idx[k]] += delta[k];
        st.eta.swap(eta_prop);
        st.loglik = ll_prop;
      }
      if (adapting) adapt_scale(log_cb, alpha, block_target, t);
    }

    if (qf > 0 && m == 0) {
      // With no random effects the walk above is the only coefficient move
      // and its mixing per draw degrades with the dimension.  An
      // independence proposal from the Laplace approximation (multivariate
      // t around the penalised mode, covariance from the same Fisher
      // factor) gives near-iid draws for the plain GLM; the walk stays as
      // the fallback wherever the approximation is poor.
      constexpr double df = 7.0;
      Eigen::VectorXd z(qf);
      for (int k = 0; k < qf; ++k) z[k] = rng.normal();
      double chi2 = 0.0;
      for (int k = 0; k < static_cast<int>(df); ++k) {
        const double g = rng.normal();
        chi2 += g * g;
      }
      const double scale = std::sqrt(df / chi2);
      const Eigen::VectorXd step =
          scale * pre.fisher_llt.matrixU().solve(z);
      const double d2_prop = scale * scale * z.squaredNorm();
      Eigen::VectorXd dev_cur(qf);
      for (int k = 0; k < qf; ++k)
        dev_cur[k] = st.beta[pre.free_idx[k]] - pre.beta_mode[pre.free_idx[k]];
      const double d2_cur =
          (pre.fisher_llt.matrixU() * dev_cur).squaredNorm();
      Eigen::VectorXd beta_prop(qf);
      for (int k = 0; k < qf; ++k)
        beta_prop[k] = pre.beta_mode[pre.free_idx[k]] + step[k];
      eta_prop = pre.design_free * beta_prop;
      const double ll_prop = bernoulli_loglik(spec.y, eta_prop);
      double diff = ll_prop - st.loglik;
      for (int k = 0; k < qf; ++k) {
        const int col = pre.free_idx[k];
        const double sd = prior_sd[col];
        const double b0 = st.beta[col];
        const double b1 = pre.beta_mode[col] + step[k];
        diff += 0.5 * (b0 * b0 - b1 * b1) / (sd * sd);
      }
      const double half = 0.5 * (df + static_cast<double>(qf));
      diff += half * (std::log1p(d2_prop / df) - std::log1p(d2_cur / df));
      if (std::log(rng.uniform_pos()) < diff) {
        for (int k = 0; k < qf; ++k) st.beta[pre.free_idx[k]] = beta_prop[k];
        st.eta.swap(eta_prop);
        st.loglik = ll_prop;
      }
    }

    if (m > 0) {
      const double phi2 = std::exp(2.0 * st.lphi);
      // Refresh the caches once per sweep; the in-sweep updates below are
      // exact up to round-off but this stops the error from compounding
      // across thousands of iterations.  The linear predictor only needs it
      // when translations run, since those cancel in exact arithmetic only.
      if (!trans_dirs.empty()) {
        st.eta = spec.design * st.beta + spec.clusters->expand(st.nu);
        st.loglik = bernoulli_loglik(spec.y, st.eta);
      }
      if (spatial) {
        st.g = st.q_mat * st.nu;
        st.quad = st.nu.dot(st.g);
      } else {
        st.g = st.nu;
        st.quad = st.nu.squaredNorm();
      }
      for (int j = 0; j < m; ++j) {
        const double delta = std::exp(log_site[j]) * rng.normal();
        const double qjj = spatial ? st.q_mat(j, j) : 1.0;
        double dll = 0.0;
        for (int i : spec.clusters->members[j]) {
          const double a0 = st.eta[i];
          const double a1 = a0 + delta;
          dll += spec.y[i] * delta - softplus(a1) + softplus(a0);
        }
        const double dquad = 2.0 * delta * st.g[j] + delta * delta * qjj;
        const double diff = dll - 0.5 * dquad / phi2;
        const double alpha = std::min(1.0, std::exp(std::min(diff, 0.0)));
        if (std::log(rng.uniform_pos()) < diff) {
          st.nu[j] += delta;
          for (int i : spec.clusters->members[j]) st.eta[i] += delta;
          st.loglik += dll;
          st.quad += dquad;
          if (spatial)
            st.g += delta * st.q_mat.col(j);
          else
            st.g[j] = st.nu[j];
        }
        if (adapting) adapt_scale(log_site[j], alpha, 0.44, t);
      }

      if (spec.re_sd_fixed <= 0.0) {  // random-effect scale, log scale
        const double lphi_prop = st.lphi + std::exp(log_sphi) * rng.normal();
        double diff = -std::numeric_limits<double>::infinity();
        if (std::abs(lphi_prop) < 50.0) {  // overflow guard
          const double p2n = std::exp(2.0 * lphi_prop);
          diff = (-0.5 * st.quad / p2n - m * lphi_prop) -
                 (-0.5 * st.quad / phi2 - m * st.lphi) +
                 half_cauchy_log_pdf(std::exp(lphi_prop),
                                     spec.priors.re_scale_prior) -
                 half_cauchy_log_pdf(std::exp(st.lphi),
                                     spec.priors.re_scale_prior) +
                 lphi_prop - st.lphi;
        }
        const double alpha = std::min(1.0, std::exp(std::min(diff, 0.0)));
        if (std::log(rng.uniform_pos()) < diff) st.lphi = lphi_prop;
        if (adapting) adapt_scale(log_sphi, alpha, 0.44, t);

        // Interweaved scale update in the whitened parameterisation: move
        // the scale while rescaling every random effect with it.  The
        // m-dimensional Gaussian prior cancels against the rescaling
        // Jacobian, leaving likelihood and scale prior only.  This breaks
        // the scale/effect coupling when clusters are weakly informed.
        const double lphi_w = st.lphi + std::exp(log_sphi_white) * rng.normal();
        double wdiff = -std::numeric_limits<double>::infinity();
        double ll_w = 0.0;
        if (std::abs(lphi_w) < 50.0) {
          const double c = std::exp(lphi_w - st.lphi);
          eta_prop = st.eta + spec.clusters->expand((c - 1.0) * st.nu);
          ll_w = bernoulli_loglik(spec.y, eta_prop);
          wdiff = ll_w - st.loglik +
                  half_cauchy_log_pdf(std::exp(lphi_w),
                                      spec.priors.re_scale_prior) -
                  half_cauchy_log_pdf(std::exp(st.lphi),
                                      spec.priors.re_scale_prior) +
                  lphi_w - st.lphi;
        }
        const double walpha = std::min(1.0, std::exp(std::min(wdiff, 0.0)));
        if (std::log(rng.uniform_pos()) < wdiff) {
          const double c = std::exp(lphi_w - st.lphi);
          st.nu *= c;
          st.eta.swap(eta_prop);
          st.loglik = ll_w;
          st.lphi = lphi_w;
          st.quad *= c * c;
          st.g *= c;
        }
        if (adapting) adapt_scale(log_sphi_white, walpha, 0.44, t);
      }

      if (qf > 0) {
        // Compensated block move: shift the coefficients while every
        // cluster's random effect absorbs the cluster-average change in the
        // linear predictor.  Only the within-cluster part of the shift hits
        // the likelihood, so cluster-correlated coefficients can take steps
        // of the size their marginal posterior actually has.
        Eigen::VectorXd zc(qf);
        for (int k = 0; k < qf; ++k) zc[k] = rng.normal();
        const Eigen::VectorXd delta =
            std::exp(log_ccomp) * pre.fisher_llt.matrixU().solve(zc);
        const Eigen::VectorXd shift = cmean_free * delta;  // m
        eta_prop = st.eta + pre.design_free * delta -
                   spec.clusters->expand(shift);
        const double ll_prop = bernoulli_loglik(spec.y, eta_prop);
        double diff = ll_prop - st.loglik;
        for (int k = 0; k < qf; ++k) {
          const int col = pre.free_idx[k];
          const double sd = prior_sd[col];
          const double b0 = st.beta[col];
          const double b1 = b0 + delta[k];
          diff += 0.5 * (b0 * b0 - b1 * b1) / (sd * sd);
        }
        const double phi2_now = std::exp(2.0 * st.lphi);
        const double s_qs =
            spatial ? shift.dot(st.q_mat * shift) : shift.squaredNorm();
        diff -= (s_qs - 2.0 * shift.dot(st.g)) / (2.0 * phi2_now);
        const double alpha = std::min(1.0, std::exp(std::min(diff, 0.0)));
        if (std::log(rng.uniform_pos()) < diff) {
          for (int k = 0; k < qf; ++k) st.beta[pre.free_idx[k]] += delta[k];
          st.nu -= shift;
          st.eta.swap(eta_prop);
          st.loglik = ll_prop;
          if (spatial) {
            st.g = st.q_mat * st.nu;
            st.quad = st.nu.dot(st.g);
          } else {
            st.g = st.nu;
            st.quad = st.nu.squaredNorm();
          }
        }
        if (adapting) adapt_scale(log_ccomp, alpha, block_target, t);
      }

      for (std::size_t tk = 0; tk < trans_dirs.size(); ++tk) {
        // Translation interweaving: shift the coefficients along a
        // cluster-constant combination while every random effect absorbs
        // the opposite shift.  The linear predictor is invariant, so only
        // the priors enter the ratio.
        const TranslateDir& dir = trans_dirs[tk];
        const double c = std::exp(log_sloc[static_cast<int>(tk)]) *
                         rng.normal();
        const double phi2_now = std::exp(2.0 * st.lphi);
        const double s1 = dir.u.dot(st.g);  // u'Q nu
        const double sq = spatial ? dir.u.dot(st.q_mat * dir.u) : 1.0;
        double tdiff = -(sq * c * c - 2.0 * c * s1) / (2.0 * phi2_now);
        for (const auto& [col, wk] : dir.w) {
          const double step = c * wk;
          const double sdk = prior_sd[col];
          tdiff -=
              (2.0 * st.beta[col] * step + step * step) / (2.0 * sdk * sdk);
        }
        const double talpha = std::min(1.0, std::exp(std::min(tdiff, 0.0)));
        if (std::log(rng.uniform_pos()) < tdiff) {
          st.nu -= c * dir.u;
          for (const auto& [col, wk] : dir.w) st.beta[col] += c * wk;
          if (spatial) {
            st.g = st.q_mat * st.nu;
            st.quad = st.nu.dot(st.g);
          } else {
            st.g = st.nu;
            st.quad = st.nu.squaredNorm();
          }
        }
        if (adapting)
          adapt_scale(log_sloc[static_cast<int>(tk)], talpha, 0.44, t);
      }

      if (spatial) {  // correlation decay, log parameterisation
        const double llam_prop = st.llam + std::exp(log_slam) * rng.normal();
        double diff = -std::numeric_limits<double>::infinity();
        double quad_prop = 0.0, logdet_prop = 0.0;
        Eigen::LLT<Eigen::MatrixXd> llt_prop;
        if (std::abs(llam_prop) < 50.0) {
          const Eigen::MatrixXd r =
              exponential_correlation(*spec.centroids, std::exp(llam_prop)) +
              jitter * Eigen::MatrixXd::Identity(m, m);
          llt_prop.compute(r);
          if (llt_prop.info() == Eigen::Success) {
            logdet_prop = 2.0 * llt_prop.matrixL()
                                    .toDenseMatrix()
                                    .diagonal()
                                    .array()
                                    .log()
                                    .sum();
            quad_prop = st.nu.dot(llt_prop.solve(st.nu));
            const double phi2_now = std::exp(2.0 * st.lphi);
            diff = (-0.5 * quad_prop / phi2_now - 0.5 * logdet_prop) -
                   (-0.5 * st.quad / phi2_now - 0.5 * st.logdet) +
                   folded_normal_log_pdf(std::exp(llam_prop),
                                         spec.priors.decay_prior_mean,
                                         spec.priors.decay_prior_sd) -
                   folded_normal_log_pdf(std::exp(st.llam),
                                         spec.priors.decay_prior_mean,
                                         spec.priors.decay_prior_sd) +
                   llam_prop - st.llam;
          }
        }
        const double alpha = std::min(1.0, std::exp(std::min(diff, 0.0)));
        if (std::log(rng.uniform_pos()) < diff) {
          st.llam = llam_prop;
          st.logdet = logdet_prop;
          st.quad = quad_prop;
          st.q_mat = llt_prop.solve(Eigen::MatrixXd::Identity(m, m));
          st.g = st.q_mat * st.nu;
        }
        if (adapting) adapt_scale(log_slam, alpha, 0.44, t);
      }
    }

    if (!std::isfinite(st.loglik))
      throw std::runtime_error(fmt::format(
          "mcmc: chain {} diverged at iteration {}", chain, t));

    if (t >= settings.warmup) {
      const int row = t - settings.warmup;
      for (int k = 0; k < q; ++k) out(row, k) = st.beta[k];
      for (int j = 0; j < m; ++j) out(row, q + j) = st.nu[j];
      if (m > 0) out(row, q + m) = std::exp(st.lphi);
      if (spatial) out(row, q + m + 1) = std::exp(st.llam);
    }
  }
}

}  // namespace

void McmcSettings::validate() const {
  if (chains < 1)
    throw std::invalid_argument("McmcSettings: chains must be >= 1");
  if (warmup < 1 || iters <= warmup)
    throw std::invalid_argument(
        "McmcSettings: need iters > warmup >= 1");
  if (!(rhat_threshold > 1.0))
    throw std::invalid_argument(
        "McmcSettings: rhat_threshold must exceed 1");
}

void LogisticMixedSpec::validate() const {
  const Eigen::Index n = design.rows();
  const Eigen::Index q = design.cols();
  if (q == 0 || n == 0)
    throw std::invalid_argument("LogisticMixedSpec: empty design");
  if (y.size() != n)
    throw std::invalid_argument(fmt::format(
        "LogisticMixedSpec: design has {} rows but y has {}", n, y.size()));
  if (static_cast<Eigen::Index>(names.size()) != q)
    throw std::invalid_argument(fmt::format(
        "LogisticMixedSpec: {} names for {} columns", names.size(), q));
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] != 0.0 && y[i] != 1.0)
      throw std::invalid_argument(
          fmt::format("LogisticMixedSpec: y[{}] = {} is not 0/1", i, y[i]));
  if (prior_sd.size() != 0 && prior_sd.size() != q)
    throw std::invalid_argument(
        "LogisticMixedSpec: prior_sd must be empty or one per column");
  for (Eigen::Index k = 0; k < prior_sd.size(); ++k)
    if (!(prior_sd[k] >= 0.0) || !std::isfinite(prior_sd[k]))
      throw std::invalid_argument(
          "LogisticMixedSpec: prior_sd entries must be finite and >= 0");
  if (!design.allFinite())
    throw std::invalid_argument("LogisticMixedSpec: non-finite design entry");
  if (clusters) {
    if (clusters->num_units() != n)
      throw std::invalid_argument(fmt::format(
          "LogisticMixedSpec: cluster map covers {} units, data has {}",
          clusters->num_units(), n));
    if (spatial()) {
      if (!centroids)
        throw std::invalid_argument(
            "LogisticMixedSpec: spatial correlation requires centroids");
      if (centroids->rows() != clusters->num_clusters() ||
          centroids->cols() != 2)
        throw std::invalid_argument(fmt::format(
            "LogisticMixedSpec: centroids are {}x{}, expected {}x2",
            centroids->rows(), centroids->cols(),
            clusters->num_clusters()));
    }
  }
  if (!(re_sd_fixed >= 0.0) || !std::isfinite(re_sd_fixed))
    throw std::invalid_argument(
        "LogisticMixedSpec: re_sd_fixed must be finite and >= 0");
  const Eigen::VectorXd sd = effective_prior_sd();
  if ((sd.array() == 0.0).all() && !has_re())
    throw std::invalid_argument(
        "LogisticMixedSpec: every coefficient pinned and no random effects");
}

int LogisticMixedSpec::dim() const {
  int d = static_cast<int>(design.cols());
  if (has_re()) d += clusters->num_clusters() + 1;
  if (spatial()) d += 1;
  return d;
}

Eigen::VectorXd LogisticMixedSpec::effective_prior_sd() const {
  if (prior_sd.size() == design.cols()) return prior_sd;
  return Eigen::VectorXd::Constant(design.cols(), priors.fixed_effect_sd);
}

double log_posterior(const LogisticMixedSpec& spec,
                     const Eigen::VectorXd& theta) {
  const int q = static_cast<int>(spec.design.cols());
  const int m = spec.has_re() ? spec.clusters->num_clusters() : 0;
  if (theta.size() != spec.dim())
    throw std::invalid_argument(fmt::format(
        "log_posterior: theta has {} entries, model has {} parameters",
        theta.size(), spec.dim()));
  if (!theta.allFinite())
    throw std::invalid_argument("log_posterior: non-finite parameter value");
  const Eigen::VectorXd beta = theta.head(q);
  Eigen::VectorXd eta = spec.design * beta;
  if (m > 0) eta += spec.clusters->expand(theta.segment(q, m));
  double lp = bernoulli_loglik(spec.y, eta);

  const Eigen::VectorXd sd = spec.effective_prior_sd();
  for (int k = 0; k < q; ++k) {
    if (sd[k] == 0.0) {
      if (beta[k] != 0.0)
        throw std::invalid_argument(fmt::format(
            "log_posterior: coefficient {} is pinned but theta is nonzero", k));
      continue;
    }
    lp += -0.5 * (beta[k] / sd[k]) * (beta[k] / sd[k]) - std::log(sd[k]) -
          0.5 * kLog2Pi;
  }

  if (m > 0) {
    const Eigen::VectorXd nu = theta.segment(q, m);
    const double lphi = theta[q + m];
    const double phi = std::exp(lphi);
    if (spec.spatial()) {
      const double llam = theta[q + m + 1];
      const Eigen::MatrixXd r =
          exponential_correlation(*spec.centroids, std::exp(llam)) +
          spec.re_correlation.jitter *
              Eigen::MatrixXd::Identity(m, m);
      Eigen::LLT<Eigen::MatrixXd> llt(r);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            "log_posterior: correlation factorization failed");
      const double logdet =
          2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const double quad = nu.dot(llt.solve(nu));
      lp += -0.5 * quad / (phi * phi) - m * lphi - 0.5 * logdet -
            0.5 * m * kLog2Pi;
      lp += folded_normal_log_pdf(std::exp(llam), spec.priors.decay_prior_mean,
                                  spec.priors.decay_prior_sd) +
            llam;
    } else {
      lp += -0.5 * nu.squaredNorm() / (phi * phi) - m * lphi -
            0.5 * m * kLog2Pi;
    }
    if (spec.re_sd_fixed > 0.0) {
      if (lphi != std::log(spec.re_sd_fixed))
        throw std::invalid_argument(
            "log_posterior: random-effect sd is fixed but theta disagrees");
    } else {
      lp += half_cauchy_log_pdf(phi, spec.priors.re_scale_prior) + lphi;
    }
  }
  return lp;
}

std::pair<PosteriorSample, ConvergenceReport> sample(
    const LogisticMixedSpec& spec, const McmcSettings& settings) {
  spec.validate();
  settings.validate();
  const int q = static_cast<int>(spec.design.cols());
  const int m = spec.has_re() ? spec.clusters->num_clusters() : 0;
  const int kept = settings.iters - settings.warmup;
  const Preconditioner pre = build_preconditioner(spec);

  PosteriorSample out;
  out.chains = settings.chains;
  out.warmup_dropped = settings.warmup * settings.chains;
  out.names = spec.names;
  if (m > 0) {
    for (int j = 0; j < m; ++j)
      out.names.push_back(
          fmt::format("{}[{}]", spec.re_label, spec.clusters->labels[j]));
    out.names.push_back(spec.re_label + "_sd");
    if (spec.spatial()) out.names.push_back(spec.re_label + "_decay");
  }
  out.draws.resize(static_cast<Eigen::Index>(kept) * settings.chains,
                   spec.dim());
  out.chain_id.resize(static_cast<std::size_t>(kept) * settings.chains);
  for (int c = 0; c < settings.chains; ++c)
    std::fill(out.chain_id.begin() + static_cast<std::ptrdiff_t>(c) * kept,
              out.chain_id.begin() + static_cast<std::ptrdiff_t>(c + 1) * kept,
              c);

  if (settings.parallel_chains && settings.chains > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(settings.chains);
    for (int c = 0; c < settings.chains; ++c) {
      workers.emplace_back([&, c]() {
        try {
          run_chain(spec, pre, settings, c,
                    out.draws.middleRows(static_cast<Eigen::Index>(c) * kept,
                                         kept));
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  } else {
    for (int c = 0; c < settings.chains; ++c)
      run_chain(spec, pre, settings, c,
                out.draws.middleRows(static_cast<Eigen::Index>(c) * kept,
                                     kept));
  }

  ConvergenceReport report;
  report.names = out.names;
  report.rhat = split_rhat(out);
  report.ess = effective_sample_size(out);
  report.threshold = settings.rhat_threshold;
  report.pass = true;
  const Eigen::VectorXd sd = spec.effective_prior_sd();
  for (Eigen::Index j = 0; j < report.rhat.size(); ++j) {
    if (j < q && sd[j] == 0.0) continue;  // pinned: constant by construction
    if (spec.re_sd_fixed > 0.0 && j == q + m) continue;
    if (!std::isfinite(report.rhat[j]) ||
        report.rhat[j] >= settings.rhat_threshold)
      report.pass = false;
  }
  return {std::move(out), std::move(report)};
}

Eigen::Index PosteriorSample::column(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return static_cast<Eigen::Index>(k);
  throw std::invalid_argument(
      fmt::format("PosteriorSample: no column named '{}'", name));
}

Eigen::VectorXd posterior_point(const PosteriorSample& sample,
                                const std::vector<std::string>& names) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k)
    out[static_cast<Eigen::Index>(k)] =
        sample.draws.col(sample.column(names[k])).mean();
  return out;
}

void export_draws(const PosteriorSample& sample, const std::string& path) {
  std::vector<std::string> header = {"chain", "iter"};
  header.insert(header.end(), sample.names.begin(), sample.names.end());
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(sample.draws.rows()));
  const int per_chain = sample.draws_per_chain();
  for (Eigen::Index r = 0; r < sample.draws.rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(sample.names.size() + 2);
    row.push_back(std::to_string(sample.chain_id[static_cast<std::size_t>(r)]));
    row.push_back(std::to_string(per_chain > 0 ? r % per_chain : r));
    for (Eigen::Index c = 0; c < sample.draws.cols(); ++c)
      row.push_back(format_double(sample.draws(r, c)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

}  // namespace mlate
