#include "mlate/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "mlate/diagnostics.hpp"
#include "mlate/rng.hpp"

namespace mlate {

namespace {

int resolve_workers(int requested, int jobs) {
  int w = requested > 0 ? requested
                        : static_cast<int>(std::thread::hardware_concurrency());
  if (w < 1) w = 1;
  return std::min(w, std::max(jobs, 1));
}

// Static partition of [0, jobs) across workers; slot-indexed writes keep the
// output independent of the worker count.
template <typename Body>
void parallel_over(int jobs, int workers, const Body& body) {
  if (workers <= 1) {
    for (int r = 0; r < jobs; ++r) body(r);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int lo = static_cast<int>(static_cast<long long>(jobs) * w / workers);
    const int hi =
        static_cast<int>(static_cast<long long>(jobs) * (w + 1) / workers);
    pool.emplace_back([&, lo, hi, w]() {
      try {
        for (int r = lo; r < hi; ++r) body(r);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace

void LinearGridSpec::validate() const {
  if (m < 2) throw std::invalid_argument("LinearGridSpec: need m >= 2");
  if (n_set.empty() || sigma_set.empty() || rho_set.empty())
    throw std::invalid_argument("LinearGridSpec: empty grid axis");
  for (int n : n_set)
    if (n < 1) throw std::invalid_argument("LinearGridSpec: n >= 1 required");
  for (double s : sigma_set)
    if (!(s >= 0.0))
      throw std::invalid_argument("LinearGridSpec: negative sigma");
  for (double r : rho_set)
    if (!(std::abs(r) <= 1.0))
      throw std::invalid_argument("LinearGridSpec: |rho| <= 1 required");
  if (replicates < 1)
    throw std::invalid_argument("LinearGridSpec: replicates >= 1 required");
}

std::vector<LinearGridRow> run_linear_grid(const LinearGridSpec& spec,
                                           int workers) {
  spec.validate();
  const int kk = static_cast<int>(spec.rho_set.size());
  const int rr = spec.replicates;
  const int nthreads = resolve_workers(workers, rr);

  std::vector<LinearGridRow> rows;
  rows.reserve(spec.n_set.size() * spec.sigma_set.size() *
               spec.sigma_set.size() * static_cast<std::size_t>(kk) * 4);

  for (std::size_t ni = 0; ni < spec.n_set.size(); ++ni) {
    for (std::size_t si = 0; si < spec.sigma_set.size(); ++si) {
      for (std::size_t sj = 0; sj < spec.sigma_set.size(); ++sj) {
        // per-replicate slots: model-major, then rho, then replicate
        std::vector<double> bias_abs(4 * kk * rr, 0.0);
        std::vector<double> rmse(4 * kk * rr, 0.0);
        std::vector<char> ok(4 * rr, 0);

        LinearSimConfig base;
        base.m = spec.m;
        base.n = spec.n_set[ni];
        base.sigma_T = spec.sigma_set[si];
        base.sigma_W = spec.sigma_set[sj];
        base.mu_T = spec.mu_T;
        base.mu_W = spec.mu_W;
        base.zero_intercept_outcome = spec.zero_intercept_outcome;

        parallel_over(rr, nthreads, [&](int rep) {
          const std::uint64_t rep_seed =
              derive_seed(spec.seed, {kLinearGridStreamTag, ni, si, sj,
                                      static_cast<std::uint64_t>(rep)});
          LinearSample sample;
          Eigen::VectorXd bs_hat;
          try {
            sample = generate_linear(base, rep_seed);
            bs_hat = balancing_score_fixed(sample.data);
          } catch (const std::exception&) {
            return;  // whole replicate dropped
          }
          std::optional<Eigen::VectorXd> bs_tilde;
          try {
            bs_tilde =
                balancing_score_mixed(sample.data, base.sigma_T, base.varrho)
                    .bs;
          } catch (const std::exception&) {
            // mixed-score models dropped for this replicate only
          }
          for (int md = 1; md <= 4; ++md) {
            const auto variant = LinearModelVariant::md(md);
            const Eigen::VectorXd* bs = variant.exposure_re
                                            ? (bs_tilde ? &*bs_tilde : nullptr)
                                            : &bs_hat;
            if (bs == nullptr) continue;
            try {
              auto report =
                  fit_linear_outcome(sample.data, *bs, variant, base);
              for (int k = 0; k < kk; ++k) {
                LinearSimConfig at_rho = base;
                at_rho.rho_TW = spec.rho_set[static_cast<std::size_t>(k)];
                const auto bv =
                    theoretical_bias_variance(report, at_rho, sample.data);
                const std::size_t slot = static_cast<std::size_t>(
                    ((md - 1) * kk + k) * rr + rep);
                bias_abs[slot] = std::abs(bv.bias_Z);
                rmse[slot] =
                    std::sqrt(bv.var_Z + bv.bias_Z * bv.bias_Z);
              }
              ok[static_cast<std::size_t>((md - 1) * rr + rep)] = 1;
            } catch (const std::exception&) {
              // leave the model marked failed
            }
          }
        });

        for (int k = 0; k < kk; ++k) {
          for (int md = 1; md <= 4; ++md) {
            LinearGridRow row;
            row.n = spec.n_set[ni];
            row.rho = spec.rho_set[static_cast<std::size_t>(k)];
            row.sigma2_T = base.sigma_T * base.sigma_T;
            row.sigma2_W = base.sigma_W * base.sigma_W;
            row.model = fmt::format("MD{}", md);
            double sb = 0.0, sr = 0.0;
            int kept = 0;
            for (int rep = 0; rep < rr; ++rep) {
              if (!ok[static_cast<std::size_t>((md - 1) * rr + rep)]) continue;
              const std::size_t slot =
                  static_cast<std::size_t>(((md - 1) * kk + k) * rr + rep);
              sb += bias_abs[slot];
              sr += rmse[slot];
              ++kept;
            }
            row.failures = rr - kept;
            row.mean_abs_bias =
                kept > 0 ? sb / kept : std::numeric_limits<double>::quiet_NaN();
            row.mean_rmse =
                kept > 0 ? sr / kept : std::numeric_limits<double>::quiet_NaN();
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return rows;
}

void BinarySimConfig::validate() const {
  if (m < 2) throw std::invalid_argument("BinarySimConfig: need m >= 2");
  if (n < 1) throw std::invalid_argument("BinarySimConfig: need n >= 1");
  if (x_scenario != 1 && x_scenario != 2)
    throw std::invalid_argument("BinarySimConfig: x_scenario must be 1 or 2");
  if (tw_case < 1 || tw_case > 3)
    throw std::invalid_argument("BinarySimConfig: tw_case must be 1, 2 or 3");
  if (!(sigma_T > 0.0) || !(sigma_W > 0.0))
    throw std::invalid_argument("BinarySimConfig: cluster SDs must be > 0");
  if (replicates < 1)
    throw std::invalid_argument("BinarySimConfig: replicates >= 1 required");
  if (tw_case == 3 && (mu_T != mu_W || sigma_T != sigma_W))
    throw std::invalid_argument(
        "BinarySimConfig: the shared-pair case needs matching T and W "
        "moments");
}

BinarySample generate_binary(const BinarySimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngStream rng(seed);
  const int total = cfg.m * cfg.n;
  const double within_sd = cfg.x_scenario == 1 ? 0.1 : 0.25;
  const double between_sd = cfg.x_scenario == 1 ? 0.4 : 1.0;

  BinarySample out;
  out.T.resize(cfg.m);
  out.W.resize(cfg.m);
  Eigen::MatrixXd zeta(cfg.m, 2);
  // a and b are both always consumed so streams align across cases
  for (int j = 0; j < cfg.m; ++j) {
    zeta(j, 0) = between_sd * rng.normal();
    zeta(j, 1) = between_sd * rng.normal();
    const double a = rng.normal();
    const double b = rng.normal();
    out.T[j] = cfg.mu_T + cfg.sigma_T * a;
    if (cfg.tw_case == 1)
      out.W[j] = cfg.mu_W + cfg.sigma_W * b;
    else if (cfg.tw_case == 2)
      out.W[j] =
          cfg.mu_W + cfg.sigma_W * (0.5 * a + std::sqrt(0.75) * b);
    else
      out.W[j] = out.T[j];
  }

  std::vector<long long> ids(static_cast<std::size_t>(total));
  out.data.covariates.resize(total, 2);
  out.data.covariate_names = {"x1", "x2"};
  out.data.exposure.resize(total);
  out.data.outcome.resize(total);
  for (int i = 0; i < total; ++i) {
    const int j = i / cfg.n;
    ids[static_cast<std::size_t>(i)] = j;
    const double x1 = within_sd * rng.normal() + zeta(j, 0);
    const double x2 = within_sd * rng.normal() + zeta(j, 1);
    out.data.covariates(i, 0) = x1;
    out.data.covariates(i, 1) = x2;
    const double pz = 1.0 / (1.0 + std::exp(-(cfg.alpha[0] + cfg.alpha[1] * x1 +
                                              cfg.alpha[2] * x2 + out.T[j])));
    out.data.exposure[i] = rng.uniform() < pz ? 1.0 : 0.0;
    const double py =
        1.0 / (1.0 + std::exp(-(cfg.beta[0] + cfg.beta[1] * x1 +
                                cfg.beta[2] * x2 + cfg.beta[3] * x1 * x2 +
                                out.W[j])));
    out.data.outcome[i] = rng.uniform() < py ? 1.0 : 0.0;
  }
  out.data.clusters = build_cluster_map(ids);
  return out;
}

BinaryStudyResult run_binary_study(const BinarySimConfig& cfg,
                                   const BinaryStudySettings& settings) {
  cfg.validate();
  settings.mcmc.validate();
  const int rr = cfg.replicates;
  const int nthreads = resolve_workers(settings.workers, rr);

  // MD1/MD2 are the no-outcome-effect models on the two scores; MD3/MD4 add
  // the exchangeable outcome effect.
  const std::array<int, 4> m_numbers = {7, 10, 8, 11};

  struct Slot {
    double abs_bias[4];
    double rmse[4];
    char model_ok[4];
    double smd[2][2];  // [ps][covariate]
    char ps_ok[2];
  };
  std::vector<Slot> slots(static_cast<std::size_t>(rr));

  parallel_over(rr, nthreads, [&](int rep) {
    Slot& slot = slots[static_cast<std::size_t>(rep)];
    for (int k = 0; k < 4; ++k) slot.model_ok[k] = 0;
    for (int p = 0; p < 2; ++p) slot.ps_ok[p] = 0;

    const std::uint64_t gen_seed = derive_seed(
        cfg.seed, {kBinaryStudyStreamTag, static_cast<std::uint64_t>(rep), 1});
    const std::uint64_t fit_seed = derive_seed(
        cfg.seed, {kBinaryStudyStreamTag, static_cast<std::uint64_t>(rep), 2});
    const BinarySample sample = generate_binary(cfg, gen_seed);

    McmcSettings base = settings.mcmc;
    base.parallel_chains = false;  // replicates already run in parallel

    std::optional<PropensityEstimate> scores[2];
    for (int p = 0; p < 2; ++p) {
      const auto kind =
          p == 0 ? PropensityModelKind::ps1 : PropensityModelKind::ps2;
      McmcSettings stage = base;
      stage.seed =
          derive_seed(fit_seed, {1, static_cast<std::uint64_t>(kind)});
      try {
        scores[p] = estimate_propensity(sample.data, kind, PriorSpec{}, stage);
      } catch (const convergence_error&) {
        continue;
      }
      slot.ps_ok[p] = 1;
      const auto balance = balance_table(
          sample.data, {scores[p]->ps}, {to_string(kind)});
      slot.smd[p][0] = balance.weighted(0, 0);
      slot.smd[p][1] = balance.weighted(1, 0);
    }

    for (int k = 0; k < 4; ++k) {
      const auto kind = OutcomeModelKind::from_m_number(m_numbers[k]);
      const int p = kind.ps_kind == PropensityModelKind::ps1 ? 0 : 1;
      if (!scores[p]) continue;
      McmcSettings stage = base;
      stage.seed = derive_seed(
          fit_seed, {2, static_cast<std::uint64_t>(kind.m_number())});
      try {
        const auto fit = fit_outcome(sample.data, kind, &*scores[p],
                                     PriorSpec{}, stage);
        const auto ate =
            ate_posterior(fit.sample, sample.data, kind, &*scores[p]);
        slot.abs_bias[k] = std::abs(ate.tau.mean);
        slot.rmse[k] = std::sqrt(ate.tau.sd * ate.tau.sd +
                                 ate.tau.mean * ate.tau.mean);
        slot.model_ok[k] = 1;
      } catch (const convergence_error&) {
      }
    }
  });

  BinaryStudyResult result;
  result.replicates = rr;
  result.models.resize(4);
  result.balance.resize(2);
  for (int k = 0; k < 4; ++k)
    result.models[static_cast<std::size_t>(k)].model =
        fmt::format("MD{}", k + 1);
  result.balance[0].ps = "PS1";
  result.balance[1].ps = "PS2";

  for (int rep = 0; rep < rr; ++rep) {
    const Slot& slot = slots[static_cast<std::size_t>(rep)];
    bool any_failed = false;
    for (int k = 0; k < 4; ++k) {
      auto& cell = result.models[static_cast<std::size_t>(k)];
      if (slot.model_ok[k]) {
        cell.abs_bias.push_back(slot.abs_bias[k]);
        cell.rmse.push_back(slot.rmse[k]);
      } else {
        ++cell.gate_failures;
        any_failed = true;
      }
    }
    for (int p = 0; p < 2; ++p) {
      auto& cell = result.balance[static_cast<std::size_t>(p)];
      if (slot.ps_ok[p]) {
        cell.x1.push_back(slot.smd[p][0]);
        cell.x2.push_back(slot.smd[p][1]);
        if (std::abs(slot.smd[p][0]) > 0.10) ++cell.exceed_x1;
        if (std::abs(slot.smd[p][1]) > 0.10) ++cell.exceed_x2;
      } else {
        ++cell.gate_failures;
        any_failed = true;
      }
    }
    if (any_failed) ++result.failed_replicates;
  }

  if (result.failed_replicates >
      settings.abort_failure_fraction * rr) {
    std::string detail;
    for (const auto& cell : result.models)
      detail += fmt::format(" {}:{}", cell.model, cell.gate_failures);
    throw std::runtime_error(fmt::format(
        "run_binary_study: {} of {} replicates lost a fit to the "
        "convergence gate ({} allowed); failures per model:{}",
        result.failed_replicates, rr,
        static_cast<int>(settings.abort_failure_fraction * rr), detail));
  }
  return result;
}

}  // namespace mlate
