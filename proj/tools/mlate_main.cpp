// Command-line front end: simulation studies, real-data fits, and balance /
// model-comparison tables.  Every stochastic run writes a manifest holding
// the fully resolved configuration and seed; re-running a manifest's command
// reproduces the outputs byte for byte.
//
// Exit codes: 0 success, 1 runtime or convergence failure, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "mlate/correlation.hpp"
#include "mlate/csv.hpp"
#include "mlate/diagnostics.hpp"
#include "mlate/pipeline.hpp"
#include "mlate/rng.hpp"
#include "mlate/sim.hpp"
#include "mlate/tb.hpp"

namespace {

constexpr int kManifestSchema = 1;
constexpr const char* kToolVersion = "1.0.0";

// Invocation problems discovered after flag parsing (inconsistent model
// selections, refusing to overwrite, ...).  Mapped to exit code 2.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::string out_dir = ".";
  std::uint64_t seed = 20240901;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  if (const char* env = std::getenv("MLATE_OUT_DIR")) c.out_dir = env;
  cmd->add_option("--out", c.out_dir,
                  "Output directory (default: $MLATE_OUT_DIR or .)")
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "Master RNG seed")->capture_default_str();
  cmd->add_flag("--force", c.force, "Overwrite existing output files");
}

// Creates the output directory and refuses to clobber existing files unless
// --force was given.
std::filesystem::path prepare_out(const CommonOpts& c,
                                  const std::vector<std::string>& names) {
  const std::filesystem::path dir(c.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error(
        fmt::format("cannot create output directory {}", dir.string()));
  if (!c.force)
    for (const auto& n : names)
      if (std::filesystem::exists(dir / n))
        throw usage_error(fmt::format(
            "output {} exists; pass --force to overwrite", (dir / n).string()));
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << body;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_manifest(const std::filesystem::path& dir,
                    const std::string& manifest_name,
                    const std::string& subcommand, const nlohmann::json& config,
                    std::vector<std::string> outputs) {
  nlohmann::json j;
  j["schema_version"] = kManifestSchema;
  j["tool"] = "mlate";
  j["version"] = kToolVersion;
  j["subcommand"] = subcommand;
  j["config"] = config;
  outputs.push_back(manifest_name);
  j["outputs"] = outputs;
  write_text(dir / manifest_name, j.dump(2) + "\n");
}

void announce(const std::filesystem::path& dir,
              const std::vector<std::string>& names) {
  for (const auto& n : names) fmt::print("wrote {}\n", (dir / n).string());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Shared real-data plumbing: fit / balance / compare all read the raw
// records, derive the analysis cohort, and optionally attach centroids.

struct DataOpts {
  std::string data_path = "data/tb_synthetic.csv";
  std::string centroid_path;  // empty = no geography
  bool standardize = false;
};

void add_data(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--data", d.data_path, "Raw cohort records (CSV)")
      ->capture_default_str();
  cmd->add_option("--centroids", d.centroid_path,
                  "City centroid CSV (required for spatial models)");
  cmd->add_flag("--standardize", d.standardize,
                "Standardize continuous covariates in the design");
}

struct McmcOpts {
  int iters = 5000;  // TB-scale models need more than the library default
  int warmup = 1500;
  int chains = 2;
};

void add_mcmc(CLI::App* cmd, McmcOpts& m) {
  cmd->add_option("--iters", m.iters, "MCMC iterations per chain")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--warmup", m.warmup, "Warmup iterations dropped per chain")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--chains", m.chains, "Number of chains")
      ->check(CLI::Range(2, 16))
      ->capture_default_str();
}

mlate::Dataset load_dataset(const DataOpts& d) {
  const auto report = mlate::load_tb(d.data_path);
  mlate::CohortSpec spec;
  spec.standardize_continuous = d.standardize;
  auto cohort = mlate::derive_cohort(report.records, spec);
  if (!d.centroid_path.empty())
    return mlate::attach_geography(std::move(cohort.data), d.centroid_path);
  return std::move(cohort.data);
}

mlate::TwoStepSettings make_settings(const McmcOpts& m, std::uint64_t seed) {
  mlate::TwoStepSettings st;
  st.mcmc.iters = m.iters;
  st.mcmc.warmup = m.warmup;
  st.mcmc.chains = m.chains;
  st.mcmc.seed = seed;
  return st;
}

nlohmann::json data_mcmc_config(const DataOpts& d, const McmcOpts& m,
                                const CommonOpts& c) {
  return {{"data", d.data_path},
          {"centroids", d.centroid_path},
          {"standardize", d.standardize},
          {"iters", m.iters},
          {"warmup", m.warmup},
          {"chains", m.chains},
          {"seed", c.seed},
          {"out", c.out_dir}};
}

// Stage-1 fit matching the pipeline's internal seed derivation, so scores
// computed here are bitwise identical to the ones a full fit would produce.
mlate::PropensityEstimate fit_propensity_stage(
    const mlate::Dataset& data, mlate::PropensityModelKind kind,
    const mlate::TwoStepSettings& st) {
  mlate::PriorSpec priors = st.ps_priors;
  if (kind == mlate::PropensityModelKind::ps3 && st.auto_decay_prior) {
    if (!data.centroids)
      throw usage_error("PS3 is spatial; pass --centroids");
    const double practical = mlate::practical_range_decay(
        mlate::max_pairwise_distance(*data.centroids));
    priors.decay_prior_mean = practical;
    priors.decay_prior_sd = practical / 2.0;
  }
  mlate::McmcSettings stage1 = st.mcmc;
  stage1.seed = mlate::derive_seed(
      st.mcmc.seed, {1, static_cast<std::uint64_t>(kind)});
  return mlate::estimate_propensity(data, kind, priors, stage1,
                                    st.ps_posterior_mean_of_expit);
}

mlate::PropensityModelKind parse_ps_token(const std::string& token) {
  if (token == "PS1") return mlate::PropensityModelKind::ps1;
  if (token == "PS2") return mlate::PropensityModelKind::ps2;
  if (token == "PS3") return mlate::PropensityModelKind::ps3;
  throw usage_error(fmt::format(
      "unknown propensity model '{}'; valid ids: PS1, PS2, PS3", token));
}

int parse_outcome_token(const std::string& token) {
  if (token.size() >= 2 && token[0] == 'M') {
    const int m = std::atoi(token.c_str() + 1);
    if (m >= 1 && m <= 15 && token == fmt::format("M{}", m)) return m;
  }
  throw usage_error(fmt::format(
      "unknown outcome model '{}'; valid ids: M1..M15", token));
}

bool needs_centroids(const mlate::OutcomeModelKind& kind) {
  return kind.random_effect == mlate::OutcomeModelKind::RandomEffect::spatial ||
         (kind.uses_propensity() &&
          kind.ps_kind == mlate::PropensityModelKind::ps3);
}

// ---------------------------------------------------------------------------
// simulate-linear

struct LinearCli {
  CommonOpts common;
  std::string preset = "desk";
  int workers = 0;
  mlate::LinearGridSpec spec;  // filled after preset resolution
  CLI::Option *o_m, *o_n, *o_sigma, *o_rho, *o_reps, *o_mut, *o_muw;
  int m = 50;
  std::vector<int> n_set;
  std::vector<double> sigma_set, rho_set;
  int replicates = 0;
  double mu_t = 0.0, mu_w = 0.0;
  bool zero_intercept = false;
};

void run_simulate_linear(LinearCli& o) {
  mlate::LinearGridSpec spec;  // defaults are the full-paper grid
  if (o.preset == "desk") {
    spec.n_set = {2, 20};
    spec.sigma_set = {0.3, 1.2, 2.1, 3.0};
    spec.replicates = 200;
  }
  if (o.o_m->count()) spec.m = o.m;
  if (o.o_n->count()) spec.n_set = o.n_set;
  if (o.o_sigma->count()) spec.sigma_set = o.sigma_set;
  if (o.o_rho->count()) spec.rho_set = o.rho_set;
  if (o.o_reps->count()) spec.replicates = o.replicates;
  if (o.o_mut->count()) spec.mu_T = o.mu_t;
  if (o.o_muw->count()) spec.mu_W = o.mu_w;
  spec.zero_intercept_outcome = o.zero_intercept;
  spec.seed = o.common.seed;
  spec.validate();

  const std::vector<std::string> outputs = {"linear_grid.csv"};
  const auto dir = prepare_out(o.common, {"linear_grid.csv",
                                          "linear_grid_manifest.json"});
  const auto rows = mlate::run_linear_grid(spec, o.workers);

  std::vector<std::vector<std::string>> body;
  body.reserve(rows.size());
  for (const auto& r : rows)
    body.push_back({std::to_string(r.n), mlate::format_double(r.rho),
                    mlate::format_double(r.sigma2_T),
                    mlate::format_double(r.sigma2_W), r.model,
                    mlate::format_double(r.mean_abs_bias),
                    mlate::format_double(r.mean_rmse),
                    std::to_string(r.failures)});
  mlate::write_csv(dir / "linear_grid.csv",
                   {"n", "rho", "sigma2_T", "sigma2_W", "model",
                    "mean_abs_bias", "mean_rmse", "failures"},
                   body);

  nlohmann::json cfg = {{"preset", o.preset},
                        {"m", spec.m},
                        {"n_set", spec.n_set},
                        {"sigma_set", spec.sigma_set},
                        {"rho_set", spec.rho_set},
                        {"replicates", spec.replicates},
                        {"mu_t", spec.mu_T},
                        {"mu_w", spec.mu_W},
                        {"zero_intercept", spec.zero_intercept_outcome},
                        {"seed", spec.seed},
                        {"workers", o.workers},
                        {"out", o.common.out_dir}};
  write_manifest(dir, "linear_grid_manifest.json", "simulate-linear", cfg,
                 outputs);
  announce(dir, {"linear_grid.csv", "linear_grid_manifest.json"});
}

// ---------------------------------------------------------------------------
// simulate-binary

struct BinaryCli {
  CommonOpts common;
  std::string preset = "desk";
  int workers = 0;
  mlate::BinarySimConfig cfg;
  CLI::Option* o_reps;
  int replicates = 0;
  int iters = 0, warmup = 0;  // 0 = keep study defaults
};

void run_simulate_binary(BinaryCli& o) {
  mlate::BinarySimConfig cfg = o.cfg;
  cfg.replicates = o.preset == "paper" ? 1000 : 100;
  if (o.o_reps->count()) cfg.replicates = o.replicates;
  cfg.seed = o.common.seed;
  cfg.validate();

  mlate::BinaryStudySettings st;
  st.workers = o.workers;
  if (o.iters > 0) st.mcmc.iters = o.iters;
  if (o.warmup > 0) st.mcmc.warmup = o.warmup;

  const std::vector<std::string> outputs = {"binary_models.csv",
                                            "binary_balance.csv"};
  const auto dir = prepare_out(o.common, {"binary_models.csv",
                                          "binary_balance.csv",
                                          "binary_study_manifest.json"});
  const auto res = mlate::run_binary_study(cfg, st);

  std::vector<std::vector<std::string>> mrows;
  for (const auto& m : res.models)
    mrows.push_back({m.model, std::to_string(m.abs_bias.size()),
                     std::to_string(m.gate_failures),
                     mlate::format_double(median_of(m.abs_bias)),
                     mlate::format_double(mean_of(m.abs_bias)),
                     mlate::format_double(median_of(m.rmse)),
                     mlate::format_double(mean_of(m.rmse))});
  mlate::write_csv(dir / "binary_models.csv",
                   {"model", "replicates_kept", "gate_failures",
                    "median_abs_bias", "mean_abs_bias", "median_rmse",
                    "mean_rmse"},
                   mrows);

  std::vector<std::vector<std::string>> brows;
  for (const auto& b : res.balance)
    brows.push_back({b.ps, std::to_string(b.x1.size()),
                     std::to_string(b.gate_failures),
                     mlate::format_double(median_of(b.x1)),
                     mlate::format_double(median_of(b.x2)),
                     std::to_string(b.exceed_x1), std::to_string(b.exceed_x2)});
  mlate::write_csv(dir / "binary_balance.csv",
                   {"ps", "replicates_kept", "gate_failures",
                    "median_weighted_smd_x1", "median_weighted_smd_x2",
                    "exceed_0.10_x1", "exceed_0.10_x2"},
                   brows);

  nlohmann::json jcfg = {{"preset", o.preset},
                         {"m", cfg.m},
                         {"n", cfg.n},
                         {"x_scenario", cfg.x_scenario},
                         {"tw_case", cfg.tw_case},
                         {"sigma_t", cfg.sigma_T},
                         {"sigma_w", cfg.sigma_W},
                         {"mu_t", cfg.mu_T},
                         {"mu_w", cfg.mu_W},
                         {"replicates", cfg.replicates},
                         {"iters", st.mcmc.iters},
                         {"warmup", st.mcmc.warmup},
                         {"seed", cfg.seed},
                         {"workers", o.workers},
                         {"out", o.common.out_dir}};
  write_manifest(dir, "binary_study_manifest.json", "simulate-binary", jcfg,
                 outputs);
  announce(dir, {"binary_models.csv", "binary_balance.csv",
                 "binary_study_manifest.json"});
}

// ---------------------------------------------------------------------------
// fit

struct FitCli {
  CommonOpts common;
  DataOpts data;
  McmcOpts mcmc;
  std::string outcome;
  std::string ps;  // optional; must agree with the outcome model
};

void run_fit(FitCli& o) {
  const int m_number = parse_outcome_token(o.outcome);
  const auto kind = mlate::OutcomeModelKind::from_m_number(m_number);
  if (!o.ps.empty()) {
    const auto requested = parse_ps_token(o.ps);
    if (!kind.uses_propensity())
      throw usage_error(fmt::format(
          "{} does not condition on a propensity score; drop --ps",
          kind.label()));
    if (requested != kind.ps_kind)
      throw usage_error(fmt::format("{} conditions on the {} score, not {}",
                                    kind.label(),
                                    mlate::to_string(kind.ps_kind), o.ps));
  }
  if (needs_centroids(kind) && o.data.centroid_path.empty())
    throw usage_error(fmt::format(
        "{} has a spatial component; pass --centroids", kind.label()));

  const std::string report_name = fmt::format("fit_{}.json", kind.label());
  const std::string manifest_name =
      fmt::format("fit_{}_manifest.json", kind.label());
  const auto dir = prepare_out(o.common, {report_name, manifest_name});

  const auto data = load_dataset(o.data);
  const auto settings = make_settings(o.mcmc, o.common.seed);
  const auto report = mlate::two_step(data, kind, settings);

  nlohmann::json cfg = data_mcmc_config(o.data, o.mcmc, o.common);
  cfg["outcome"] = kind.label();
  if (kind.uses_propensity()) cfg["ps"] = mlate::to_string(kind.ps_kind);
  write_text(dir / report_name, mlate::serialize_report(report, cfg.dump()));
  write_manifest(dir, manifest_name, "fit", cfg, {report_name});
  announce(dir, {report_name, manifest_name});
}

// ---------------------------------------------------------------------------
// balance

struct TableCli {
  CommonOpts common;
  DataOpts data;
  McmcOpts mcmc;
  std::vector<std::string> models;
};

void run_balance(TableCli& o) {
  if (o.models.empty()) throw usage_error("empty model list; pass --models");
  std::vector<mlate::PropensityModelKind> kinds;
  for (const auto& token : o.models) kinds.push_back(parse_ps_token(token));

  const auto dir = prepare_out(o.common, {"balance.csv",
                                          "balance_manifest.json"});
  const auto data = load_dataset(o.data);
  const auto settings = make_settings(o.mcmc, o.common.seed);

  std::vector<Eigen::VectorXd> scores;
  std::vector<std::string> labels;
  for (const auto kind : kinds) {
    scores.push_back(fit_propensity_stage(data, kind, settings).ps);
    labels.push_back(mlate::to_string(kind));
  }
  const auto table = mlate::balance_table(data, scores, labels);

  std::vector<std::string> header = {"covariate", "unweighted"};
  for (const auto& label : labels) header.push_back("weighted_" + label);
  std::vector<std::vector<std::string>> body;
  for (std::size_t i = 0; i < table.covariates.size(); ++i) {
    std::vector<std::string> row = {
        table.covariates[i],
        mlate::format_double(table.unweighted[static_cast<int>(i)])};
    for (int c = 0; c < table.weighted.cols(); ++c)
      row.push_back(
          mlate::format_double(table.weighted(static_cast<int>(i), c)));
    body.push_back(std::move(row));
  }
  mlate::write_csv(dir / "balance.csv", header, body);

  nlohmann::json cfg = data_mcmc_config(o.data, o.mcmc, o.common);
  cfg["models"] = o.models;
  write_manifest(dir, "balance_manifest.json", "balance", cfg,
                 {"balance.csv"});
  announce(dir, {"balance.csv", "balance_manifest.json"});
}

// ---------------------------------------------------------------------------
// compare

void run_compare(TableCli& o) {
  if (o.models.empty()) throw usage_error("empty model list; pass --models");

  // Validate every token before any expensive work.
  struct Item {
    std::string token;
    bool exposure = false;
    mlate::PropensityModelKind ps = mlate::PropensityModelKind::ps1;
    int m_number = 0;
  };
  std::vector<Item> items;
  for (const auto& token : o.models) {
    Item it;
    it.token = token;
    if (token.rfind("PS", 0) == 0) {
      it.exposure = true;
      it.ps = parse_ps_token(token);
    } else {
      it.m_number = parse_outcome_token(token);
    }
    items.push_back(it);
  }

  const auto dir = prepare_out(o.common, {"compare.csv",
                                          "compare_manifest.json"});
  const auto data = load_dataset(o.data);
  const auto settings = make_settings(o.mcmc, o.common.seed);

  // Exposure fits are shared: a PS row and an outcome model conditioning on
  // the same score kind reuse one estimate (identical to recomputation by
  // the stage-seed convention).
  std::map<int, mlate::PropensityEstimate> ps_cache;
  const auto get_ps = [&](mlate::PropensityModelKind kind)
      -> const mlate::PropensityEstimate& {
    const int key = static_cast<int>(kind);
    auto found = ps_cache.find(key);
    if (found == ps_cache.end())
      found = ps_cache
                  .emplace(key, fit_propensity_stage(data, kind, settings))
                  .first;
    return found->second;
  };

  std::vector<std::vector<std::string>> body;
  for (const auto& it : items) {
    mlate::FitReport fit;
    if (it.exposure) {
      fit = get_ps(it.ps).fit;
    } else {
      const auto kind = mlate::OutcomeModelKind::from_m_number(it.m_number);
      if (needs_centroids(kind) && o.data.centroid_path.empty())
        throw usage_error(fmt::format(
            "{} has a spatial component; pass --centroids", kind.label()));
      const mlate::PropensityEstimate* reuse =
          kind.uses_propensity() ? &get_ps(kind.ps_kind) : nullptr;
      fit = mlate::two_step(data, kind, settings, reuse).outcome_fit;
    }
    body.push_back({it.token, mlate::format_double(fit.elpd_waic),
                    mlate::format_double(fit.p_waic),
                    mlate::format_double(fit.waic),
                    mlate::format_double(fit.elpd_loo),
                    mlate::format_double(fit.p_loo),
                    mlate::format_double(fit.loo)});
  }
  mlate::write_csv(dir / "compare.csv",
                   {"model", "elpd_waic", "p_waic", "waic", "elpd_loo",
                    "p_loo", "loo"},
                   body);

  nlohmann::json cfg = data_mcmc_config(o.data, o.mcmc, o.common);
  cfg["models"] = o.models;
  write_manifest(dir, "compare_manifest.json", "compare", cfg,
                 {"compare.csv"});
  announce(dir, {"compare.csv", "compare_manifest.json"});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian multilevel causal-effect estimation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Flat key=value config file; section headers select the "
                 "subcommand (flags take precedence)");

  LinearCli lin;
  auto* sl = app.add_subcommand(
      "simulate-linear",
      "Continuous-outcome bias grid for the four balancing-score models");
  add_common(sl, lin.common);
  sl->add_option("--preset", lin.preset, "Grid size: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  lin.o_m = sl->add_option("--m", lin.m, "Clusters per replicate")
                ->check(CLI::PositiveNumber);
  lin.o_n = sl->add_option("--n-set", lin.n_set, "Units-per-cluster values")
                ->delimiter(',');
  lin.o_sigma =
      sl->add_option("--sigma-set", lin.sigma_set,
                     "Cluster-effect SD axis (shared by exposure and outcome)")
          ->delimiter(',');
  lin.o_rho = sl->add_option("--rho-set", lin.rho_set,
                             "Cluster-effect correlations")
                  ->delimiter(',');
  lin.o_reps = sl->add_option("--replicates", lin.replicates,
                              "Monte Carlo replicates per cell")
                   ->check(CLI::PositiveNumber);
  lin.o_mut = sl->add_option("--mu-t", lin.mu_t, "Exposure cluster-effect mean");
  lin.o_muw = sl->add_option("--mu-w", lin.mu_w, "Outcome cluster-effect mean");
  sl->add_flag("--zero-intercept", lin.zero_intercept,
               "Zero outcome intercept variant");
  sl->add_option("--workers", lin.workers,
                 "Worker threads (0 = available cores)")
      ->check(CLI::NonNegativeNumber);
  sl->callback([&lin] { run_simulate_linear(lin); });

  BinaryCli bin;
  auto* sb = app.add_subcommand(
      "simulate-binary",
      "Null-effect binary study: MD1-MD4 fits over replicated datasets");
  add_common(sb, bin.common);
  sb->add_option("--preset", bin.preset, "Replicate budget: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  sb->add_option("--x-scenario", bin.cfg.x_scenario,
                 "Covariate variance split (1 or 2)")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  sb->add_option("--tw-case", bin.cfg.tw_case,
                 "Cluster-effect dependence: 1 independent, 2 correlated, "
                 "3 identical")
      ->check(CLI::IsMember({1, 2, 3}))
      ->capture_default_str();
  sb->add_option("--m", bin.cfg.m, "Clusters")->check(CLI::PositiveNumber)
      ->capture_default_str();
  sb->add_option("--n", bin.cfg.n, "Units per cluster")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bin.o_reps = sb->add_option("--replicates", bin.replicates,
                              "Replicates (overrides the preset)")
                   ->check(CLI::PositiveNumber);
  sb->add_option("--sigma-t", bin.cfg.sigma_T, "Exposure cluster-effect SD")
      ->capture_default_str();
  sb->add_option("--sigma-w", bin.cfg.sigma_W, "Outcome cluster-effect SD")
      ->capture_default_str();
  sb->add_option("--mu-t", bin.cfg.mu_T, "Exposure cluster-effect mean")
      ->capture_default_str();
  sb->add_option("--mu-w", bin.cfg.mu_W, "Outcome cluster-effect mean")
      ->capture_default_str();
  sb->add_option("--iters", bin.iters, "MCMC iterations per fit")
      ->check(CLI::PositiveNumber);
  sb->add_option("--warmup", bin.warmup, "MCMC warmup per fit")
      ->check(CLI::PositiveNumber);
  sb->add_option("--workers", bin.workers,
                 "Worker threads (0 = available cores)")
      ->check(CLI::NonNegativeNumber);
  sb->callback([&bin] { run_simulate_binary(bin); });

  FitCli fit;
  auto* sf = app.add_subcommand(
      "fit", "Two-step causal fit on cohort records; emits a JSON report");
  add_common(sf, fit.common);
  add_data(sf, fit.data);
  add_mcmc(sf, fit.mcmc);
  sf->add_option("--outcome", fit.outcome, "Outcome model id (M1..M15)")
      ->required();
  sf->add_option("--ps", fit.ps,
                 "Propensity model id (PS1..PS3); optional, must match the "
                 "outcome model");
  sf->callback([&fit] { run_fit(fit); });

  TableCli bal;
  auto* sba = app.add_subcommand(
      "balance", "Covariate balance table: unweighted and weighted SMDs");
  add_common(sba, bal.common);
  add_data(sba, bal.data);
  add_mcmc(sba, bal.mcmc);
  sba->add_option("--models", bal.models,
                  "Propensity models to weight by (e.g. PS1,PS2,PS3)")
      ->delimiter(',')
      ->default_val(std::vector<std::string>{"PS1", "PS2", "PS3"})
      ->capture_default_str();
  sba->callback([&bal] { run_balance(bal); });

  TableCli cmp;
  auto* sc = app.add_subcommand(
      "compare", "WAIC / LOO comparison table for exposure or outcome models");
  add_common(sc, cmp.common);
  add_data(sc, cmp.data);
  add_mcmc(sc, cmp.mcmc);
  sc->add_option("--models", cmp.models,
                 "Model ids, exposure (PS1..PS3) or outcome (M1..M15)")
      ->delimiter(',')
      ->required();
  sc->callback([&cmp] { run_compare(cmp); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mlate::convergence_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
