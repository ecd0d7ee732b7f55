#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mlate/pipeline.hpp"
#include "mlate/rng.hpp"

using namespace mlate;

namespace reference {

double expit(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Table-style ATE oracle, written draw by draw and unit by unit.
struct AteOracle {
  std::vector<double> tau;
  std::vector<double> odds;
};

AteOracle ate_by_hand(const Eigen::MatrixXd& draws,
                      const Eigen::MatrixXd& design, int z_col,
                      const Eigen::VectorXi* assignment, int m) {
  const int q = static_cast<int>(design.cols());
  const int n = static_cast<int>(design.rows());
  AteOracle out;
  for (int l = 0; l < draws.rows(); ++l) {
    long double t1 = 0, t0 = 0;
    for (int i = 0; i < n; ++i) {
      double base = 0;
      for (int k = 0; k < q; ++k)
        if (k != z_col) base += draws(l, k) * design(i, k);
      if (assignment) base += draws(l, q + (*assignment)[i]);
      t1 += expit(base + draws(l, z_col));
      t0 += expit(base);
    }
    out.tau.push_back(static_cast<double>((t1 - t0) / n));
    out.odds.push_back(std::exp(draws(l, z_col)));
  }
  (void)m;
  return out;
}

}  // namespace reference

namespace {

struct Sim {
  Dataset data;
  Eigen::VectorXd true_ps;
};

// Clustered logistic exposure + outcome data with two covariates.
Sim make_sim(int m, int per_cluster, std::uint64_t seed, double beta_z,
             double re_sd_exposure = 0.5, double re_sd_outcome = 0.5) {
  RngStream rng(seed);
  const int n = m * per_cluster;
  Sim sim;
  sim.data.covariates.resize(n, 2);
  sim.data.covariate_names = {"x1", "x2"};
  sim.data.outcome.resize(n);
  sim.data.exposure.resize(n);
  sim.true_ps.resize(n);
  std::vector<long long> ids;
  std::vector<double> t(m), w(m);
  for (int j = 0; j < m; ++j) {
    t[j] = re_sd_exposure * rng.normal();
    w[j] = re_sd_outcome * rng.normal();
  }
  for (int i = 0; i < n; ++i) {
    const int j = i / per_cluster;
    ids.push_back(100 + j);
    const double x1 = rng.normal(), x2 = rng.normal();
    sim.data.covariates(i, 0) = x1;
    sim.data.covariates(i, 1) = x2;
    sim.true_ps[i] = reference::expit(0.2 + 0.8 * x1 - 0.5 * x2 + t[j]);
    const double z = rng.uniform() < sim.true_ps[i] ? 1.0 : 0.0;
    sim.data.exposure[i] = z;
    const double mu =
        reference::expit(-0.3 + beta_z * z + 0.6 * x1 + 0.4 * x2 + w[j]);
    sim.data.outcome[i] = rng.uniform() < mu ? 1.0 : 0.0;
  }
  sim.data.clusters = build_cluster_map(ids);
  return sim;
}

McmcSettings quick_settings(std::uint64_t seed, int iters = 2200,
                            int warmup = 800) {
  McmcSettings s;
  s.seed = seed;
  s.iters = iters;
  s.warmup = warmup;
  return s;
}

}  // namespace

TEST_CASE("model grid numbering walks adjustment then random effect") {
  // M1..M15: {none, covariates, PS1, PS2, PS3} x {none, iid, spatial}
  for (int m = 1; m <= 15; ++m) {
    const auto kind = OutcomeModelKind::from_m_number(m);
    CHECK(kind.m_number() == m);
    CHECK(kind.label() == std::string("M") + std::to_string(m));
  }
  CHECK(OutcomeModelKind::from_m_number(1).adjustment ==
        OutcomeModelKind::Adjustment::none);
  CHECK(OutcomeModelKind::from_m_number(1).random_effect ==
        OutcomeModelKind::RandomEffect::none);
  CHECK(OutcomeModelKind::from_m_number(5).adjustment ==
        OutcomeModelKind::Adjustment::covariates);
  CHECK(OutcomeModelKind::from_m_number(5).random_effect ==
        OutcomeModelKind::RandomEffect::iid);
  CHECK(OutcomeModelKind::from_m_number(7).uses_propensity());
  CHECK(OutcomeModelKind::from_m_number(7).ps_kind == PropensityModelKind::ps1);
  CHECK(OutcomeModelKind::from_m_number(7).random_effect ==
        OutcomeModelKind::RandomEffect::none);
  CHECK(OutcomeModelKind::from_m_number(10).ps_kind ==
        PropensityModelKind::ps2);
  CHECK(OutcomeModelKind::from_m_number(11).random_effect ==
        OutcomeModelKind::RandomEffect::iid);
  CHECK(OutcomeModelKind::from_m_number(15).ps_kind ==
        PropensityModelKind::ps3);
  CHECK(OutcomeModelKind::from_m_number(15).random_effect ==
        OutcomeModelKind::RandomEffect::spatial);
  CHECK(!OutcomeModelKind::from_m_number(4).uses_propensity());
  CHECK_THROWS_AS(OutcomeModelKind::from_m_number(0), std::invalid_argument);
  CHECK_THROWS_AS(OutcomeModelKind::from_m_number(16), std::invalid_argument);
  CHECK(to_string(PropensityModelKind::ps3) == "PS3");
}

TEST_CASE("summarize_draws matches a hand computation") {
  Eigen::VectorXd v(5);
  v << 3.0, 1.0, 4.0, 1.5, 9.0;
  const auto s = summarize_draws(v);
  CHECK(s.mean == doctest::Approx(3.7).epsilon(1e-15));
  // n-1 denominator
  double ss = 0;
  for (int i = 0; i < 5; ++i) ss += (v[i] - 3.7) * (v[i] - 3.7);
  CHECK(s.sd == doctest::Approx(std::sqrt(ss / 4.0)).epsilon(1e-15));
  // type-7 on sorted {1, 1.5, 3, 4, 9}: h = 4p
  CHECK(s.q025 == doctest::Approx(1.0 + 0.1 * 0.5).epsilon(1e-12));
  CHECK(s.q975 == doctest::Approx(4.0 + 0.9 * 5.0).epsilon(1e-12));
  CHECK_THROWS_AS(summarize_draws(Eigen::VectorXd()), std::invalid_argument);
}

TEST_CASE("outcome design assembles and absorbs constant columns") {
  Sim sim = make_sim(4, 10, 77, 0.5);

  const auto m1 = build_outcome_design(
      sim.data, OutcomeModelKind::from_m_number(1), nullptr);
  REQUIRE(m1.design.cols() == 2);
  CHECK(m1.names == std::vector<std::string>{"intercept", "z"});
  CHECK(m1.design.col(0).minCoeff() == 1.0);
  CHECK((m1.design.col(1).array() == sim.data.exposure.array()).all());

  const auto m4 = build_outcome_design(
      sim.data, OutcomeModelKind::from_m_number(4), nullptr);
  REQUIRE(m4.design.cols() == 4);
  CHECK(m4.names[2] == "x1");
  CHECK((m4.design.col(2).array() == sim.data.covariates.col(0).array()).all());

  // constant covariates are absorbed into the intercept
  Dataset flat = sim.data;
  flat.covariates.col(0).setConstant(3.0);
  const auto m4f = build_outcome_design(
      flat, OutcomeModelKind::from_m_number(4), nullptr);
  REQUIRE(m4f.design.cols() == 3);
  CHECK(m4f.names == std::vector<std::string>{"intercept", "z", "x2"});

  // propensity adjustment requires a matching estimate
  CHECK_THROWS_AS(build_outcome_design(
                      sim.data, OutcomeModelKind::from_m_number(7), nullptr),
                  std::invalid_argument);
  PropensityEstimate ps;
  ps.kind = PropensityModelKind::ps2;
  ps.ps = Eigen::VectorXd::Constant(sim.data.num_units(), 0.4);
  CHECK_THROWS_AS(build_outcome_design(
                      sim.data, OutcomeModelKind::from_m_number(7), &ps),
                  std::invalid_argument);
  ps.kind = PropensityModelKind::ps1;
  PropensityEstimate short_ps = ps;
  short_ps.ps = Eigen::VectorXd::Constant(3, 0.4);
  CHECK_THROWS_AS(build_outcome_design(
                      sim.data, OutcomeModelKind::from_m_number(7), &short_ps),
                  std::invalid_argument);
  // a constant score column is absorbed as well
  const auto m7c = build_outcome_design(
      sim.data, OutcomeModelKind::from_m_number(7), &ps);
  CHECK(m7c.design.cols() == 2);
  ps.ps = sim.true_ps;
  const auto m7 = build_outcome_design(
      sim.data, OutcomeModelKind::from_m_number(7), &ps);
  REQUIRE(m7.design.cols() == 3);
  CHECK(m7.names[2] == "ps");
  CHECK((m7.design.col(2).array() == sim.true_ps.array()).all());
}

TEST_CASE("ate_posterior reproduces a hand computation with own terms kept") {
  Sim sim = make_sim(2, 4, 5150, 0.7);
  const auto kind = OutcomeModelKind::from_m_number(2);  // none + iid
  const auto od = build_outcome_design(sim.data, kind, nullptr);
  const int q = static_cast<int>(od.design.cols());
  const int m = sim.data.clusters.num_clusters();

  PosteriorSample sample;
  sample.names = {"intercept", "z", "eta[100]", "eta[101]", "eta_sd"};
  sample.chains = 1;
  sample.draws.resize(3, q + m + 1);
  sample.draws << 0.3, 0.9, -0.4, 0.2, 0.5,  //
      -1.0, -0.6, 0.1, 0.3, 0.4,             //
      0.0, 0.0, 2.0, -2.0, 1.0;
  sample.chain_id = {0, 0, 0};

  const auto got = ate_posterior(sample, sim.data, kind, nullptr);
  const auto want = reference::ate_by_hand(
      sample.draws, od.design, od.z_col, &sim.data.clusters.assignment, m);
  REQUIRE(got.tau_draws.size() == 3);
  for (int l = 0; l < 3; ++l) {
    CHECK(got.tau_draws[l] == doctest::Approx(want.tau[l]).epsilon(1e-14));
    CHECK(got.or_draws[l] == want.odds[l]);
    // sign carried by the exposure coefficient; zero coefficient, zero effect
    if (sample.draws(l, 1) == 0.0)
      CHECK(got.tau_draws[l] == 0.0);
    else
      CHECK(got.tau_draws[l] * sample.draws(l, 1) > 0.0);
    CHECK(got.tau_draws[l] >= -1.0);
    CHECK(got.tau_draws[l] <= 1.0);
    CHECK(got.or_draws[l] > 0.0);
  }
  CHECK(got.tau.mean ==
        doctest::Approx((want.tau[0] + want.tau[1] + want.tau[2]) / 3.0)
            .epsilon(1e-14));

  // dimension and name mismatches are rejected
  PosteriorSample bad = sample;
  bad.names[1] = "zz";
  CHECK_THROWS_AS(ate_posterior(bad, sim.data, kind, nullptr),
                  std::invalid_argument);
  PosteriorSample wide = sample;
  wide.draws.conservativeResize(3, q + m + 2);
  CHECK_THROWS_AS(ate_posterior(wide, sim.data, kind, nullptr),
                  std::invalid_argument);
}

TEST_CASE("ate_posterior is invariant to unit permutation and relabeling") {
  Sim sim = make_sim(2, 4, 404, 0.3);
  const auto kind = OutcomeModelKind::from_m_number(5);  // covariates + iid
  const int n = sim.data.num_units();
  const auto od = build_outcome_design(sim.data, kind, nullptr);
  const int q = static_cast<int>(od.design.cols());

  PosteriorSample sample;
  sample.names = {"intercept", "z", "x1", "x2", "a", "b", "s"};
  sample.chains = 1;
  sample.chain_id = {0, 0};
  sample.draws.resize(2, q + 2 + 1);
  sample.draws << -0.2, 0.8, 0.5, -0.3, 0.7, -0.9, 0.8,  //
      0.4, -1.1, 0.0, 0.2, -0.5, 0.3, 0.6;

  // reverse the units and reverse the cluster id order (old ids 100,101 ->
  // new ids 6,5), so cluster columns swap in the relabeled fit
  Dataset rev;
  rev.outcome.resize(n);
  rev.exposure.resize(n);
  rev.covariates.resize(n, 2);
  rev.covariate_names = sim.data.covariate_names;
  std::vector<long long> ids(n);
  for (int i = 0; i < n; ++i) {
    const int s = n - 1 - i;
    rev.outcome[i] = sim.data.outcome[s];
    rev.exposure[i] = sim.data.exposure[s];
    rev.covariates.row(i) = sim.data.covariates.row(s);
    ids[static_cast<std::size_t>(i)] =
        sim.data.clusters.assignment[s] == 0 ? 6 : 5;
  }
  rev.clusters = build_cluster_map(ids);

  PosteriorSample perm = sample;
  perm.draws.col(q) = sample.draws.col(q + 1);
  perm.draws.col(q + 1) = sample.draws.col(q);

  const auto a = ate_posterior(sample, sim.data, kind, nullptr);
  const auto b = ate_posterior(perm, rev, kind, nullptr);
  for (int l = 0; l < 2; ++l) {
    CHECK(a.tau_draws[l] == doctest::Approx(b.tau_draws[l]).epsilon(1e-12));
    CHECK(a.or_draws[l] == b.or_draws[l]);
  }
}

TEST_CASE("zero exposure coefficient gives an exactly null effect") {
  Sim sim = make_sim(2, 5, 9, 0.0);
  const auto kind = OutcomeModelKind::from_m_number(1);
  PosteriorSample sample;
  sample.names = {"intercept", "z"};
  sample.chains = 1;
  sample.chain_id = {0, 0, 0};
  sample.draws.resize(3, 2);
  sample.draws << 0.4, 0.0, -2.0, 0.0, 11.0, 0.0;
  const auto ate = ate_posterior(sample, sim.data, kind, nullptr);
  for (int l = 0; l < 3; ++l) {
    CHECK(ate.tau_draws[l] == 0.0);
    CHECK(ate.or_draws[l] == 1.0);
  }
  CHECK(ate.tau.mean == 0.0);
  CHECK(ate.tau.sd == 0.0);
}

TEST_CASE("propensity scores recover the truth and stay inside (0,1)") {
  // single big cluster; PS1 ignores it anyway
  Sim sim = make_sim(5, 500, 314159, 0.4, 0.0);
  auto est = estimate_propensity(sim.data, PropensityModelKind::ps1,
                                 PriorSpec{}, quick_settings(2024, 2600, 900));
  CHECK(est.kind == PropensityModelKind::ps1);
  CHECK(est.convergence.pass);
  CHECK(!est.separation_flag);
  REQUIRE(est.ps.size() == sim.data.num_units());
  double err = 0;
  for (int i = 0; i < est.ps.size(); ++i) {
    CHECK(est.ps[i] > 0.0);
    CHECK(est.ps[i] < 1.0);
    err += std::abs(est.ps[i] - sim.true_ps[i]);
  }
  CHECK(err / est.ps.size() < 0.05);

  // named point estimates expose the exposure coefficients
  REQUIRE(est.point_names.size() == 3);
  CHECK(est.point_names[0] == "intercept");
  CHECK(est.point_names[1] == "x1");
  CHECK(est.point_estimates[1] == doctest::Approx(0.8).epsilon(0.25));

  // exposure-model fit diagnostics ride along
  CHECK(est.fit.elpd_waic < 0.0);
  CHECK(std::isfinite(est.fit.loo));
  CHECK(est.fit.pareto_k.size() == sim.data.num_units());

  // the averaged-probability variant is close but not identical
  auto avg = estimate_propensity(sim.data, PropensityModelKind::ps1,
                                 PriorSpec{}, quick_settings(2024, 2600, 900),
                                 true);
  double err2 = 0, gap = 0;
  for (int i = 0; i < avg.ps.size(); ++i) {
    err2 += std::abs(avg.ps[i] - sim.true_ps[i]);
    gap = std::max(gap, std::abs(avg.ps[i] - est.ps[i]));
  }
  CHECK(err2 / avg.ps.size() < 0.05);
  CHECK(gap > 1e-12);
  CHECK(gap < 0.05);
}

TEST_CASE("antithetic data centers the score at one half") {
  // mirrored pairs make the exposure posterior exactly symmetric around
  // zero, so the plugged-in coefficients sit at zero up to MC error and
  // every score lands near expit(0) = 1/2
  RngStream rng(88);
  const int half = 150;
  Dataset data;
  data.covariates.resize(2 * half, 2);
  data.covariate_names = {"x1", "x2"};
  data.exposure.resize(2 * half);
  data.outcome.resize(2 * half);
  std::vector<long long> ids;
  for (int i = 0; i < half; ++i) {
    const double x1 = rng.normal(), x2 = rng.normal();
    const double z = rng.uniform() < 0.5 ? 1.0 : 0.0;
    data.covariates.row(2 * i) << x1, x2;
    data.covariates.row(2 * i + 1) << -x1, -x2;
    data.exposure[2 * i] = z;
    data.exposure[2 * i + 1] = 1.0 - z;
    data.outcome[2 * i] = 1.0;
    data.outcome[2 * i + 1] = 0.0;
    ids.push_back(1);
    ids.push_back(1);
  }
  data.clusters = build_cluster_map(ids);
  auto est = estimate_propensity(data, PropensityModelKind::ps1, PriorSpec{},
                                 quick_settings(7, 4200, 1200));
  for (int i = 0; i < est.ps.size(); ++i)
    CHECK(est.ps[i] == doctest::Approx(0.5).epsilon(0.12));
  const double mean_ps = est.ps.mean();
  CHECK(mean_ps == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("separated exposure raises the flag but keeps scores clamped") {
  Dataset data;
  const int n = 200;
  data.covariates.resize(n, 1);
  data.covariate_names = {"x1"};
  data.exposure.resize(n);
  data.outcome.resize(n);
  std::vector<long long> ids;
  RngStream rng(3);
  for (int i = 0; i < n; ++i) {
    const double x = i % 2 == 0 ? 4.0 : -4.0;
    data.covariates(i, 0) = x;
    data.exposure[i] = x > 0 ? 1.0 : 0.0;
    data.outcome[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    ids.push_back(i % 4);
  }
  data.clusters = build_cluster_map(ids);
  auto est = estimate_propensity(data, PropensityModelKind::ps1, PriorSpec{},
                                 quick_settings(11, 9000, 3000));
  CHECK(est.separation_flag);
  for (int i = 0; i < n; ++i) {
    CHECK(est.ps[i] >= 1e-12);
    CHECK(est.ps[i] <= 1.0 - 1e-12);
  }
}

TEST_CASE("estimate_propensity input checks") {
  Sim sim = make_sim(3, 10, 21, 0.2);
  Dataset cont = sim.data;
  cont.exposure[0] = 0.37;
  CHECK_THROWS_AS(estimate_propensity(cont, PropensityModelKind::ps1,
                                      PriorSpec{}, quick_settings(1)),
                  std::invalid_argument);
  Dataset nocent = sim.data;
  nocent.centroids.reset();
  CHECK_THROWS_AS(estimate_propensity(nocent, PropensityModelKind::ps3,
                                      PriorSpec{}, quick_settings(1)),
                  std::invalid_argument);
  // rank-deficient exposure design
  Dataset dup = sim.data;
  dup.covariates.col(1) = dup.covariates.col(0);
  CHECK_THROWS_AS(estimate_propensity(dup, PropensityModelKind::ps1,
                                      PriorSpec{}, quick_settings(1)),
                  std::invalid_argument);
}

TEST_CASE("hopeless chain budgets fail the gate loudly") {
  Sim sim = make_sim(4, 12, 55, 0.4);
  McmcSettings tiny;
  tiny.seed = 5;
  tiny.iters = 3;
  tiny.warmup = 1;
  bool threw = false;
  try {
    fit_outcome(sim.data, OutcomeModelKind::from_m_number(2), nullptr,
                PriorSpec{}, tiny);
  } catch (const convergence_error& e) {
    threw = true;
    CHECK(!e.report().pass);
    CHECK(e.report().rhat.size() > 0);
  }
  CHECK(threw);
  CHECK_THROWS_AS(estimate_propensity(sim.data, PropensityModelKind::ps2,
                                      PriorSpec{}, tiny),
                  convergence_error);
}

TEST_CASE("a pinned score coefficient reproduces the unadjusted fit") {
  Sim sim = make_sim(3, 200, 606, 0.8, 0.0, 0.0);
  const auto ps = estimate_propensity(sim.data, PropensityModelKind::ps1,
                                      PriorSpec{}, quick_settings(41));

  const auto m1 = fit_outcome(sim.data, OutcomeModelKind::from_m_number(1),
                              nullptr, PriorSpec{}, quick_settings(42));
  Eigen::VectorXd pin(3);
  pin << 10.0, 10.0, 0.0;
  const auto m7 = fit_outcome(sim.data, OutcomeModelKind::from_m_number(7),
                              &ps, PriorSpec{}, quick_settings(43), pin);

  // the pinned column never moves
  const auto ps_col = m7.sample.column("ps");
  CHECK(m7.sample.draws.col(ps_col).cwiseAbs().maxCoeff() == 0.0);

  // identical likelihood, so the exposure coefficient posterior agrees
  const double b1 = m1.sample.draws.col(1).mean();
  const double b7 = m7.sample.draws.col(1).mean();
  CHECK(b1 == doctest::Approx(b7).epsilon(0.08));

  const auto a1 = ate_posterior(m1.sample, sim.data,
                                OutcomeModelKind::from_m_number(1), nullptr);
  const auto a7 = ate_posterior(m7.sample, sim.data,
                                OutcomeModelKind::from_m_number(7), &ps);
  CHECK(a1.tau.mean == doctest::Approx(a7.tau.mean).epsilon(0.2));
  CHECK(std::abs(a1.tau.mean - a7.tau.mean) < 0.02);
}

TEST_CASE("constant covariates reduce adjustment to the unadjusted model") {
  Sim sim = make_sim(3, 150, 777, 0.6, 0.0, 0.0);
  Dataset flat = sim.data;
  flat.covariates.col(0).setConstant(2.0);
  flat.covariates.col(1).setConstant(-1.0);
  const auto m4 = fit_outcome(flat, OutcomeModelKind::from_m_number(4),
                              nullptr, PriorSpec{}, quick_settings(91));
  CHECK(m4.design.names == std::vector<std::string>{"intercept", "z"});
  const auto m1 = fit_outcome(flat, OutcomeModelKind::from_m_number(1),
                              nullptr, PriorSpec{}, quick_settings(92));
  const double b4 = m4.sample.draws.col(1).mean();
  const double b1 = m1.sample.draws.col(1).mean();
  CHECK(std::abs(b4 - b1) < 0.05);
}

TEST_CASE("two-step reports share frozen scores bit for bit") {
  Sim sim = make_sim(12, 20, 1234, 0.5);
  TwoStepSettings settings;
  settings.mcmc = quick_settings(98765, 2300, 800);

  const auto m8 = OutcomeModelKind::from_m_number(8);   // PS1 + iid
  const auto m7 = OutcomeModelKind::from_m_number(7);   // PS1, no RE
  const auto r8 = two_step(sim.data, m8, settings);
  const auto r7_fresh = two_step(sim.data, m7, settings);
  REQUIRE(r8.propensity.has_value());
  REQUIRE(r7_fresh.propensity.has_value());

  // stage-one seeds depend only on the score model, so the frozen score is
  // the same vector wherever it appears
  CHECK((r8.propensity->ps.array() == r7_fresh.propensity->ps.array()).all());
  CHECK((r8.propensity->point_estimates.array() ==
         r7_fresh.propensity->point_estimates.array())
            .all());

  // reusing the estimate changes nothing downstream
  const auto r7_reuse = two_step(sim.data, m7, settings, &*r8.propensity);
  CHECK((r7_reuse.propensity->ps.array() == r8.propensity->ps.array()).all());
  CHECK((r7_reuse.outcome.sample.draws.array() ==
         r7_fresh.outcome.sample.draws.array())
            .all());
  CHECK(r7_reuse.ate.tau.mean == r7_fresh.ate.tau.mean);

  // and the outcome stage never feeds back into the frozen estimate
  CHECK((r7_reuse.propensity->point_estimates.array() ==
         r8.propensity->point_estimates.array())
            .all());

  // a reused score must match the requested model
  CHECK_THROWS_AS(two_step(sim.data, OutcomeModelKind::from_m_number(10),
                           settings, &*r8.propensity),
                  std::invalid_argument);

  // report plumbing
  CHECK(r8.seed == settings.mcmc.seed);
  CHECK(r8.positivity.has_value());
  CHECK(r8.balance.weight_labels ==
        std::vector<std::string>{"PS1"});
  CHECK(r8.balance.unweighted.size() == 2);
  CHECK(r8.outcome_fit.elpd_loo < 0.0);
  CHECK(r8.ate.tau_draws.size() == r8.outcome.sample.draws.rows());
  for (int l = 0; l < r8.ate.tau_draws.size(); ++l) {
    const double bz = r8.outcome.sample.draws(l, 1);
    CHECK(r8.ate.tau_draws[l] * bz >= 0.0);
    CHECK(std::abs(r8.ate.tau_draws[l]) <= 1.0);
    CHECK(r8.ate.or_draws[l] == std::exp(bz));
  }
}

TEST_CASE("two-step report serializes to parseable json") {
  Sim sim = make_sim(10, 18, 3141, 0.5);
  TwoStepSettings settings;
  settings.mcmc = quick_settings(13579, 3600, 1100);

  const auto r10 = two_step(sim.data, OutcomeModelKind::from_m_number(10),
                            settings);
  const auto j = nlohmann::json::parse(
      serialize_report(r10, "{\"label\":\"smoke\"}"));
  CHECK(j["schema_version"] == 1);
  CHECK(j["model"] == "M10");
  CHECK(j["adjustment"] == "propensity");
  CHECK(j["random_effect"] == "none");
  CHECK(j["ps_model"] == "PS2");
  CHECK(j["seed"] == 13579);
  CHECK(j["ate"]["mean"].is_number());
  CHECK(j["odds_ratio"]["q975"].is_number());
  CHECK(j["coefficients"].contains("z"));
  CHECK(j["coefficients"].contains("ps"));
  CHECK(j["outcome_convergence"]["pass"] == true);
  CHECK(j["outcome_fit"]["waic"].is_number());
  CHECK(j["propensity"]["model"] == "PS2");
  CHECK(j["propensity"]["fit"]["loo"].is_number());
  CHECK(j["balance"]["weighted"].size() == 2);
  CHECK(j["positivity"]["treated"]["median"].is_number());
  CHECK(j["config"]["label"] == "smoke");

  const auto r2 = two_step(sim.data, OutcomeModelKind::from_m_number(2),
                           settings);
  const auto j2 = nlohmann::json::parse(serialize_report(r2));
  CHECK(j2["model"] == "M2");
  CHECK(!j2.contains("ps_model"));
  CHECK(!j2.contains("propensity"));
  CHECK(!j2.contains("positivity"));
  CHECK(!j2.contains("config"));
  CHECK(!j2["balance"].contains("weighted"));
  CHECK(j2["coefficients"].contains("eta_sd"));
}
