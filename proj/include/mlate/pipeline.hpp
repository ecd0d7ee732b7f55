#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlate/diagnostics.hpp"
#include "mlate/mcmc.hpp"
#include "mlate/types.hpp"

namespace mlate {

// The plug-in two-step estimator: fit an exposure (propensity) model, freeze
// a point-estimate propensity score, fit an outcome model that may condition
// on it, then average the fitted success probabilities with the exposure
// forced to 1 and to 0 to obtain the ATE posterior.  The frozen score enters
// the outcome design as a known covariate; there is no feedback.

enum class PropensityModelKind { ps1 = 1, ps2 = 2, ps3 = 3 };

std::string to_string(PropensityModelKind kind);

struct PropensityEstimate {
  Eigen::VectorXd ps;  // strictly inside (0,1)
  PropensityModelKind kind = PropensityModelKind::ps1;
  std::vector<std::string> point_names;  // gamma, nu, scale (and decay) labels
  Eigen::VectorXd point_estimates;       // posterior means, same order
  bool separation_flag = false;  // some fitted score fell within 1e-6 of 0/1
  ConvergenceReport convergence;
  FitReport fit;  // WAIC / LOO of the exposure model
};

// Outcome-model family: confounding adjustment crossed with the
// random-intercept structure.  The M numbering walks adjustments in the
// order none, covariates, score from PS1, PS2, PS3, each with random
// effect none / exchangeable / spatial: M1..M15.
struct OutcomeModelKind {
  enum class Adjustment { none, covariates, propensity };
  enum class RandomEffect { none, iid, spatial };

  Adjustment adjustment = Adjustment::none;
  RandomEffect random_effect = RandomEffect::none;
  PropensityModelKind ps_kind = PropensityModelKind::ps1;  // when propensity

  bool uses_propensity() const {
    return adjustment == Adjustment::propensity;
  }
  static OutcomeModelKind from_m_number(int m);
  int m_number() const;
  std::string label() const;  // "M1".."M15"
};

// Raised when a fit fails the R-hat gate; carries the offending report.
class convergence_error : public std::runtime_error {
 public:
  convergence_error(const std::string& what, ConvergenceReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const ConvergenceReport& report() const { return report_; }

 private:
  ConvergenceReport report_;
};

struct PosteriorSummary {
  double mean = 0, sd = 0, q025 = 0, q975 = 0;
};

PosteriorSummary summarize_draws(const Eigen::VectorXd& draws);

struct AtePosterior {
  Eigen::VectorXd tau_draws;
  Eigen::VectorXd or_draws;
  PosteriorSummary tau;
  PosteriorSummary odds_ratio;
};

struct OutcomeDesign {
  Eigen::MatrixXd design;
  std::vector<std::string> names;
  int z_col = 1;  // exposure column index
};

// [intercept | exposure | adjustment columns]; the propensity column is the
// frozen score from `ps` (required iff the kind conditions on one).
// Adjustment columns that are constant across units are absorbed into the
// intercept, i.e. dropped, so they never make the design collinear.
OutcomeDesign build_outcome_design(const Dataset& data,
                                   const OutcomeModelKind& kind,
                                   const PropensityEstimate* ps);

// Stage 1.  Fits the exposure model and plugs posterior means of the
// coefficients (and random effects, when present) into expit; with
// `posterior_mean_of_expit` the score is instead the posterior mean of the
// per-unit expit.  Scores are clamped away from exact 0/1 by 1e-12 and the
// separation flag records any value within 1e-6 of the boundary.  Throws
// convergence_error when the R-hat gate fails.
PropensityEstimate estimate_propensity(const Dataset& data,
                                       PropensityModelKind kind,
                                       const PriorSpec& priors,
                                       const McmcSettings& mcmc,
                                       bool posterior_mean_of_expit = false);

struct OutcomeFit {
  OutcomeModelKind kind;
  OutcomeDesign design;
  PosteriorSample sample;
  ConvergenceReport convergence;
};

// Stage 2.  `prior_sd_override`, when non-empty, gives one prior sd per
// design column (zero pins a coefficient at exactly zero).  Throws
// convergence_error on gate failure and std::invalid_argument on a
// rank-deficient design.
OutcomeFit fit_outcome(const Dataset& data, const OutcomeModelKind& kind,
                       const PropensityEstimate* ps, const PriorSpec& priors,
                       const McmcSettings& mcmc,
                       const Eigen::VectorXd& prior_sd_override = {});

// Per-draw theta_z with every unit's own adjustment and random-effect terms
// kept while the exposure is forced to z; tau = theta_1 - theta_0, and the
// odds ratio is exp of the exposure coefficient.
AtePosterior ate_posterior(const PosteriorSample& sample, const Dataset& data,
                           const OutcomeModelKind& kind,
                           const PropensityEstimate* ps);

struct TwoStepSettings {
  PriorSpec ps_priors;
  PriorSpec outcome_priors;
  McmcSettings mcmc;  // mcmc.seed is the master seed; stage seeds derive
  bool ps_posterior_mean_of_expit = false;
  // Centre the folded-normal decay prior at the practical-range value
  // (correlation 0.05 at half the maximum centroid distance) whenever a
  // spatial component is fitted.
  bool auto_decay_prior = true;
};

struct TwoStepReport {
  OutcomeModelKind kind;
  std::optional<PropensityEstimate> propensity;
  OutcomeFit outcome;
  AtePosterior ate;
  SmdReport balance;  // weighted column present only when a score exists
  std::optional<PositivitySummary> positivity;
  FitReport outcome_fit;
  std::uint64_t seed = 0;
};

// Orchestrates both stages.  `reuse_ps`, when given, must match the kind's
// propensity model and skips stage 1 (the estimate is shared frozen state
// across outcome models).  Stage seeds are derived from mcmc.seed by stage
// and model number, so a reused score is identical to a recomputed one.
TwoStepReport two_step(const Dataset& data, const OutcomeModelKind& kind,
                       const TwoStepSettings& settings,
                       const PropensityEstimate* reuse_ps = nullptr);

// JSON rendering of the report: model identifiers, posterior summaries,
// diagnostics, seed, plus an optional caller-supplied config echo (must be
// a JSON object when nonempty).
std::string serialize_report(const TwoStepReport& report,
                             const std::string& config_json = "");

}  // namespace mlate
