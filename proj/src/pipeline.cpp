#include "mlate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/SVD>
#include <fmt/format.h>
#include <json.hpp>

#include "mlate/correlation.hpp"
#include "mlate/rng.hpp"

namespace mlate {

namespace {

constexpr double kSeparationTol = 1e-6;
constexpr double kPsClamp = 1e-12;

double softplus(double a) {
  return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a)));
}

void check_rank(const Eigen::MatrixXd& design, const char* who) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[sv.size() - 1] <= 1e-10 * sv[0])
    throw std::invalid_argument(
        fmt::format("{}: design matrix is rank deficient", who));
}

double quantile_type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
}

void enforce_gate(const ConvergenceReport& report, const std::string& label) {
  if (report.pass) return;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < report.rhat.size(); ++j) {
    const double r = report.rhat[j];
    if (std::isnan(r))
      worst = std::numeric_limits<double>::quiet_NaN();
    else if (!std::isnan(worst))
      worst = std::max(worst, r);
  }
  throw convergence_error(
      fmt::format("{}: R-hat gate failed (threshold {}, worst {})", label,
                  report.threshold, worst),
      report);
}

// Linear predictor eta = design * beta + A nu at the posterior point.
Eigen::VectorXd point_linear_predictor(const Eigen::MatrixXd& design,
                                       const PosteriorSample& sample,
                                       const ClusterMap* clusters) {
  const Eigen::Index q = design.cols();
  Eigen::VectorXd point(sample.draws.cols());
  for (Eigen::Index k = 0; k < sample.draws.cols(); ++k)
    point[k] = sample.draws.col(k).mean();
  Eigen::VectorXd eta = design * point.head(q);
  if (clusters)
    eta += clusters->expand(point.segment(q, clusters->num_clusters()));
  return eta;
}

// WAIC/LOO for a Bernoulli-logit fit without materializing the full
// draws x observations log-likelihood matrix.
FitReport bernoulli_fit_report(const PosteriorSample& sample,
                               const Eigen::MatrixXd& design,
                               const Eigen::VectorXd& y,
                               const ClusterMap* clusters) {
  const Eigen::Index q = design.cols();
  const Eigen::MatrixXd beta = sample.draws.leftCols(q);
  Eigen::MatrixXd eta_re;
  if (clusters)
    eta_re = sample.draws.middleCols(q, clusters->num_clusters());
  const int n = static_cast<int>(design.rows());
  return fit_report_streaming(n, [&](int i) {
    Eigen::VectorXd a = beta * design.row(i).transpose();
    if (clusters) a += eta_re.col(clusters->assignment[i]);
    for (Eigen::Index l = 0; l < a.size(); ++l)
      a[l] = y[i] * a[l] - softplus(a[l]);
    return a;
  });
}

const char* adjustment_name(OutcomeModelKind::Adjustment a) {
  switch (a) {
    case OutcomeModelKind::Adjustment::none: return "none";
    case OutcomeModelKind::Adjustment::covariates: return "covariates";
    case OutcomeModelKind::Adjustment::propensity: return "propensity";
  }
  return "?";
}

const char* re_name(OutcomeModelKind::RandomEffect r) {
  switch (r) {
    case OutcomeModelKind::RandomEffect::none: return "none";
    case OutcomeModelKind::RandomEffect::iid: return "iid";
    case OutcomeModelKind::RandomEffect::spatial: return "spatial";
  }
  return "?";
}

}  // namespace

std::string to_string(PropensityModelKind kind) {
  switch (kind) {
    case PropensityModelKind::ps1: return "PS1";
    case PropensityModelKind::ps2: return "PS2";
    case PropensityModelKind::ps3: return "PS3";
  }
  return "?";
}

OutcomeModelKind OutcomeModelKind::from_m_number(int m) {
  if (m < 1 || m > 15)
    throw std::invalid_argument(
        fmt::format("OutcomeModelKind: M{} is not in M1..M15", m));
  OutcomeModelKind kind;
  const int adj = (m - 1) / 3;
  const int re = (m - 1) % 3;
  kind.adjustment = adj == 0 ? Adjustment::none
                   : adj == 1 ? Adjustment::covariates
                              : Adjustment::propensity;
  if (adj >= 2) kind.ps_kind = static_cast<PropensityModelKind>(adj - 1);
  kind.random_effect = re == 0 ? RandomEffect::none
                       : re == 1 ? RandomEffect::iid
                                 : RandomEffect::spatial;
  return kind;
}

int OutcomeModelKind::m_number() const {
  int adj = 0;
  switch (adjustment) {
    case Adjustment::none: adj = 0; break;
    case Adjustment::covariates: adj = 1; break;
    case Adjustment::propensity: adj = 1 + static_cast<int>(ps_kind); break;
  }
  int re = 0;
  switch (random_effect) {
    case RandomEffect::none: re = 0; break;
    case RandomEffect::iid: re = 1; break;
    case RandomEffect::spatial: re = 2; break;
  }
  return 3 * adj + re + 1;
}

std::string OutcomeModelKind::label() const {
  return fmt::format("M{}", m_number());
}

PosteriorSummary summarize_draws(const Eigen::VectorXd& draws) {
  if (draws.size() == 0)
    throw std::invalid_argument("summarize_draws: empty draw vector");
  PosteriorSummary s;
  s.mean = draws.mean();
  if (draws.size() > 1)
    s.sd = std::sqrt((draws.array() - s.mean).square().sum() /
                     static_cast<double>(draws.size() - 1));
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  s.q025 = quantile_type7(v, 0.025);
  s.q975 = quantile_type7(std::move(v), 0.975);
  return s;
}

OutcomeDesign build_outcome_design(const Dataset& data,
                                   const OutcomeModelKind& kind,
                                   const PropensityEstimate* ps) {
  const int n = data.num_units();

  // Adjustment columns; constant ones are absorbed into the intercept.
  std::vector<std::pair<std::string, Eigen::VectorXd>> adjust;
  if (kind.adjustment == OutcomeModelKind::Adjustment::covariates) {
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) {
      const Eigen::VectorXd col = data.covariates.col(j);
      if (col.maxCoeff() > col.minCoeff())
        adjust.emplace_back(data.covariate_names[static_cast<std::size_t>(j)],
                            col);
    }
  } else if (kind.uses_propensity()) {
    if (ps == nullptr)
      throw std::invalid_argument(fmt::format(
          "{} conditions on a propensity score but none was supplied",
          kind.label()));
    if (ps->kind != kind.ps_kind)
      throw std::invalid_argument(fmt::format(
          "{} expects a {} score but received {}", kind.label(),
          to_string(kind.ps_kind), to_string(ps->kind)));
    if (ps->ps.size() != n)
      throw std::invalid_argument(fmt::format(
          "propensity score has {} entries for {} units", ps->ps.size(), n));
    if (ps->ps.maxCoeff() > ps->ps.minCoeff())
      adjust.emplace_back("ps", ps->ps);
  }

  OutcomeDesign out;
  out.z_col = 1;
  out.design.resize(n, 2 + static_cast<Eigen::Index>(adjust.size()));
  out.design.col(0).setOnes();
  out.design.col(1) = data.exposure;
  out.names = {"intercept", "z"};
  for (std::size_t k = 0; k < adjust.size(); ++k) {
    out.design.col(2 + static_cast<Eigen::Index>(k)) = adjust[k].second;
    out.names.push_back(adjust[k].first);
  }
  return out;
}

PropensityEstimate estimate_propensity(const Dataset& data,
                                       PropensityModelKind kind,
                                       const PriorSpec& priors,
                                       const McmcSettings& mcmc,
                                       bool posterior_mean_of_expit) {
  data.validate();
  if (!data.exposure_is_binary())
    throw std::invalid_argument(
        "estimate_propensity: exposure must be binary");
  const int n = data.num_units();
  const int p = static_cast<int>(data.covariates.cols());

  LogisticMixedSpec spec;
  spec.design.resize(n, 1 + p);
  spec.design.col(0).setOnes();
  spec.design.rightCols(p) = data.covariates;
  spec.names = {"intercept"};
  spec.names.insert(spec.names.end(), data.covariate_names.begin(),
                    data.covariate_names.end());
  check_rank(spec.design, "estimate_propensity");
  spec.y = data.exposure;
  spec.priors = priors;
  spec.re_label = "nu";
  if (kind != PropensityModelKind::ps1) {
    spec.clusters = data.clusters;
    if (kind == PropensityModelKind::ps3) {
      if (!data.centroids)
        throw std::invalid_argument(
            "estimate_propensity: PS3 requires cluster centroids");
      spec.re_correlation.kind = CorrelationModel::Kind::exponential;
      spec.centroids = data.centroids;
    }
  }

  auto [sample, report] = mlate::sample(spec, mcmc);
  enforce_gate(report, fmt::format("propensity model {}", to_string(kind)));

  PropensityEstimate est;
  est.kind = kind;
  est.convergence = report;
  est.point_names = sample.names;
  est.point_estimates = posterior_point(sample, sample.names);

  const ClusterMap* clusters =
      kind == PropensityModelKind::ps1 ? nullptr : &data.clusters;
  if (posterior_mean_of_expit) {
    est.ps = Eigen::VectorXd::Zero(n);
    const Eigen::Index q = spec.design.cols();
    const Eigen::MatrixXd beta = sample.draws.leftCols(q);
    Eigen::MatrixXd nu_draws;
    if (clusters)
      nu_draws = sample.draws.middleCols(q, clusters->num_clusters());
    const Eigen::Index draws = sample.draws.rows();
    Eigen::VectorXd lin(draws);
    for (int i = 0; i < n; ++i) {
      lin = beta * spec.design.row(i).transpose();
      if (clusters) lin += nu_draws.col(clusters->assignment[i]);
      est.ps[i] = (1.0 / (1.0 + (-lin.array()).exp())).mean();
    }
  } else {
    const Eigen::VectorXd eta =
        point_linear_predictor(spec.design, sample, clusters);
    est.ps = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
  }

  for (int i = 0; i < n; ++i) {
    if (est.ps[i] < kSeparationTol || est.ps[i] > 1.0 - kSeparationTol)
      est.separation_flag = true;
    est.ps[i] = std::clamp(est.ps[i], kPsClamp, 1.0 - kPsClamp);
  }

  est.fit = bernoulli_fit_report(sample, spec.design, spec.y, clusters);
  return est;
}

OutcomeFit fit_outcome(const Dataset& data, const OutcomeModelKind& kind,
                       const PropensityEstimate* ps, const PriorSpec& priors,
                       const McmcSettings& mcmc,
                       const Eigen::VectorXd& prior_sd_override) {
  data.validate();
  OutcomeFit fit;
  fit.kind = kind;
  fit.design = build_outcome_design(data, kind, ps);
  check_rank(fit.design.design, "fit_outcome");

  LogisticMixedSpec spec;
  spec.design = fit.design.design;
  spec.names = fit.design.names;
  spec.y = data.outcome;
  spec.priors = priors;
  spec.prior_sd = prior_sd_override;
  spec.re_label = "eta";
  if (kind.random_effect != OutcomeModelKind::RandomEffect::none) {
    spec.clusters = data.clusters;
    if (kind.random_effect == OutcomeModelKind::RandomEffect::spatial) {
      if (!data.centroids)
        throw std::invalid_argument(fmt::format(
            "{}: spatial random effect requires centroids", kind.label()));
      spec.re_correlation.kind = CorrelationModel::Kind::exponential;
      spec.centroids = data.centroids;
    }
  }

  auto [sample, report] = mlate::sample(spec, mcmc);
  enforce_gate(report, fmt::format("outcome model {}", kind.label()));
  fit.sample = std::move(sample);
  fit.convergence = std::move(report);
  return fit;
}

AtePosterior ate_posterior(const PosteriorSample& sample, const Dataset& data,
                           const OutcomeModelKind& kind,
                           const PropensityEstimate* ps) {
  const OutcomeDesign od = build_outcome_design(data, kind, ps);
  const Eigen::Index q = od.design.cols();
  if (static_cast<Eigen::Index>(sample.names.size()) < q)
    throw std::invalid_argument(
        "ate_posterior: sample has fewer parameters than the design");
  for (Eigen::Index k = 0; k < q; ++k)
    if (sample.names[static_cast<std::size_t>(k)] !=
        od.names[static_cast<std::size_t>(k)])
      throw std::invalid_argument(fmt::format(
          "ate_posterior: sample column '{}' does not match design column "
          "'{}'",
          sample.names[static_cast<std::size_t>(k)],
          od.names[static_cast<std::size_t>(k)]));
  const bool has_re =
      kind.random_effect != OutcomeModelKind::RandomEffect::none;
  const int m = has_re ? data.clusters.num_clusters() : 0;
  const Eigen::Index expected =
      q + (has_re ? m + 1 : 0) +
      (kind.random_effect == OutcomeModelKind::RandomEffect::spatial ? 1 : 0);
  if (sample.draws.cols() != expected)
    throw std::invalid_argument(
        fmt::format("ate_posterior: sample has {} columns, expected {}",
                    sample.draws.cols(), expected));

  const Eigen::Index n_draws = sample.draws.rows();
  const int n = data.num_units();
  AtePosterior out;
  out.tau_draws.resize(n_draws);
  out.or_draws.resize(n_draws);
  Eigen::VectorXd base(n);
  const Eigen::VectorXd& z = data.exposure;
  for (Eigen::Index l = 0; l < n_draws; ++l) {
    const Eigen::VectorXd beta = sample.draws.row(l).head(q).transpose();
    base = od.design * beta;
    if (has_re)
      base += data.clusters.expand(
          sample.draws.row(l).segment(q, m).transpose());
    const double bz = beta[od.z_col];
    // own adjustment and random-effect terms kept; exposure forced to z
    const double theta1 =
        (1.0 / (1.0 + (-(base.array() + bz * (1.0 - z.array()))).exp()))
            .mean();
    const double theta0 =
        (1.0 / (1.0 + (-(base.array() - bz * z.array())).exp())).mean();
    out.tau_draws[l] = theta1 - theta0;
    out.or_draws[l] = std::exp(bz);
  }
  out.tau = summarize_draws(out.tau_draws);
  out.odds_ratio = summarize_draws(out.or_draws);
  return out;
}

TwoStepReport two_step(const Dataset& data, const OutcomeModelKind& kind,
                       const TwoStepSettings& settings,
                       const PropensityEstimate* reuse_ps) {
  data.validate();
  TwoStepReport report;
  report.kind = kind;
  report.seed = settings.mcmc.seed;

  const bool spatial_somewhere =
      kind.uses_propensity() && kind.ps_kind == PropensityModelKind::ps3;
  const bool spatial_outcome =
      kind.random_effect == OutcomeModelKind::RandomEffect::spatial;
  double practical = 0.0;
  if ((spatial_somewhere || spatial_outcome) && settings.auto_decay_prior) {
    if (!data.centroids)
      throw std::invalid_argument(
          "two_step: spatial component requires centroids");
    practical = practical_range_decay(max_pairwise_distance(*data.centroids));
  }

  if (kind.uses_propensity()) {
    if (reuse_ps != nullptr) {
      if (reuse_ps->kind != kind.ps_kind)
        throw std::invalid_argument(fmt::format(
            "two_step: reused score is {} but {} needs {}",
            to_string(reuse_ps->kind), kind.label(), to_string(kind.ps_kind)));
      report.propensity = *reuse_ps;
    } else {
      PriorSpec ps_priors = settings.ps_priors;
      if (practical > 0.0 && kind.ps_kind == PropensityModelKind::ps3) {
        ps_priors.decay_prior_mean = practical;
        ps_priors.decay_prior_sd = practical / 2.0;
      }
      McmcSettings stage1 = settings.mcmc;
      stage1.seed = derive_seed(settings.mcmc.seed,
                                {1, static_cast<std::uint64_t>(kind.ps_kind)});
      report.propensity =
          estimate_propensity(data, kind.ps_kind, ps_priors, stage1,
                              settings.ps_posterior_mean_of_expit);
    }
  }

  PriorSpec out_priors = settings.outcome_priors;
  if (practical > 0.0 && spatial_outcome) {
    out_priors.decay_prior_mean = practical;
    out_priors.decay_prior_sd = practical / 2.0;
  }
  McmcSettings stage2 = settings.mcmc;
  stage2.seed = derive_seed(settings.mcmc.seed,
                            {2, static_cast<std::uint64_t>(kind.m_number())});
  const PropensityEstimate* ps =
      report.propensity ? &*report.propensity : nullptr;
  report.outcome = fit_outcome(data, kind, ps, out_priors, stage2);
  report.ate = ate_posterior(report.outcome.sample, data, kind, ps);

  if (ps != nullptr) {
    report.balance =
        balance_table(data, {ps->ps}, {to_string(ps->kind)});
    report.positivity = positivity_summary(ps->ps, data.exposure);
  } else {
    report.balance = balance_table(data, {}, {});
  }
  const ClusterMap* clusters =
      kind.random_effect == OutcomeModelKind::RandomEffect::none
          ? nullptr
          : &data.clusters;
  report.outcome_fit = bernoulli_fit_report(
      report.outcome.sample, report.outcome.design.design, data.outcome,
      clusters);
  return report;
}

namespace {

nlohmann::json summary_json(const PosteriorSummary& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"q025", s.q025}, {"q975", s.q975}};
}

nlohmann::json convergence_json(const ConvergenceReport& r) {
  double max_rhat = -std::numeric_limits<double>::infinity();
  double min_ess = std::numeric_limits<double>::infinity();
  bool any = false;
  for (Eigen::Index j = 0; j < r.rhat.size(); ++j) {
    if (std::isfinite(r.rhat[j])) {
      max_rhat = std::max(max_rhat, r.rhat[j]);
      any = true;
    }
    if (std::isfinite(r.ess[j])) min_ess = std::min(min_ess, r.ess[j]);
  }
  nlohmann::json j;
  j["pass"] = r.pass;
  j["threshold"] = r.threshold;
  if (any) {
    j["max_rhat"] = max_rhat;
    j["min_ess"] = min_ess;
  }
  return j;
}

nlohmann::json fit_json(const FitReport& f) {
  return {{"elpd_waic", f.elpd_waic}, {"p_waic", f.p_waic},
          {"waic", f.waic},           {"elpd_loo", f.elpd_loo},
          {"p_loo", f.p_loo},         {"loo", f.loo},
          {"high_pareto_k", f.high_k_points.size()},
          {"pareto_fallbacks", f.pareto_fallbacks}};
}

}  // namespace

std::string serialize_report(const TwoStepReport& report,
                             const std::string& config_json) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["model"] = report.kind.label();
  j["adjustment"] = adjustment_name(report.kind.adjustment);
  j["random_effect"] = re_name(report.kind.random_effect);
  if (report.kind.uses_propensity())
    j["ps_model"] = to_string(report.kind.ps_kind);
  j["seed"] = report.seed;
  j["ate"] = summary_json(report.ate.tau);
  j["odds_ratio"] = summary_json(report.ate.odds_ratio);

  nlohmann::json coef;
  const Eigen::Index q = report.outcome.design.design.cols();
  for (Eigen::Index k = 0; k < q; ++k)
    coef[report.outcome.sample.names[static_cast<std::size_t>(k)]] =
        summary_json(
            summarize_draws(report.outcome.sample.draws.col(k)));
  for (const char* scale : {"eta_sd", "eta_decay"}) {
    const auto it = std::find(report.outcome.sample.names.begin(),
                              report.outcome.sample.names.end(), scale);
    if (it != report.outcome.sample.names.end())
      coef[scale] = summary_json(summarize_draws(report.outcome.sample.draws.col(
          it - report.outcome.sample.names.begin())));
  }
  j["coefficients"] = coef;
  j["outcome_convergence"] = convergence_json(report.outcome.convergence);
  j["outcome_fit"] = fit_json(report.outcome_fit);

  if (report.propensity) {
    nlohmann::json p;
    p["model"] = to_string(report.propensity->kind);
    p["separation_flag"] = report.propensity->separation_flag;
    p["convergence"] = convergence_json(report.propensity->convergence);
    p["fit"] = fit_json(report.propensity->fit);
    j["propensity"] = p;
  }

  nlohmann::json b;
  b["covariates"] = report.balance.covariates;
  b["binary"] = report.balance.binary;
  b["flag_threshold"] = report.balance.flag_threshold;
  b["unweighted"] = std::vector<double>(
      report.balance.unweighted.data(),
      report.balance.unweighted.data() + report.balance.unweighted.size());
  if (report.balance.weighted.cols() > 0) {
    std::vector<double> w(report.balance.weighted.data(),
                          report.balance.weighted.data() +
                              report.balance.weighted.rows());
    b["weighted"] = w;
    b["weight_label"] = report.balance.weight_labels.at(0);
  }
  j["balance"] = b;

  if (report.positivity) {
    const auto five = [](const FiveNumber& f) {
      return nlohmann::json{{"min", f.min}, {"q1", f.q1}, {"median", f.median},
                            {"q3", f.q3},   {"max", f.max}};
    };
    j["positivity"] = {{"treated", five(report.positivity->treated)},
                       {"control", five(report.positivity->control)},
                       {"overlap_low", report.positivity->overlap_low},
                       {"overlap_high", report.positivity->overlap_high},
                       {"empty_overlap", report.positivity->empty_overlap}};
  }

  if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);
  return j.dump(2) + "\n";
}

}  // namespace mlate
