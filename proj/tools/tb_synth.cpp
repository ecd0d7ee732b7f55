// Generates the synthetic TB surrogate shipped under data/.  The cohort
// margins (12,057 retained rows, 6,929 treated, 10,462 cured of which 6,774
// treated, 415 cities) are exact by construction: exposure and outcome come
// from logistic latents thresholded at the target counts, covariate margins
// are count-exact shuffles, and city exposure/outcome effects are negatively
// correlated so that city-blind models understate the treatment effect.  The
// tool re-loads its own output and aborts when any margin or the propensity
// weighted-balance check is off.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/core.h>

#include "mlate/csv.hpp"
#include "mlate/diagnostics.hpp"
#include "mlate/rng.hpp"
#include "mlate/tb.hpp"

using namespace mlate;

namespace {

constexpr int kCities = 415;
constexpr int kCohort = 12057;
constexpr int kTreated = 6929;
constexpr int kCuredTreated = 6774;
constexpr int kCuredControl = 3688;

// Table-of-baseline-variables totals for the count-exact indicators.
constexpr int kAids = 730, kAlcoholism = 2103, kDiabetes = 777,
              kDrugUse = 1969, kHomeless = 346, kMale = 8855, kMental = 177,
              kPrisoner = 2148, kSmoker = 2966;
constexpr int kTbPulm = 10229, kTbExt = 1541;  // remainder is "both"

// Conditional log-odds of treatment; chosen so the marginal covariate
// imbalance lands near the published unweighted SMDs.
struct ExposureCoefs {
  double aids = -0.77, alcoholism = -0.17, diabetes = -0.13, drug = -0.16,
         homeless = -0.43, male = 0.12, mental = -0.18, prisoner = 0.34,
         smoker = -0.03, tb_pulm = 0.20, tb_ext = -0.05;
  double age = -0.006;  // per year, centred at 37.5
  double hdi = -3.3;    // per unit, centred at 0.779
};

// Conditional log-odds of cure given covariates and city.
struct OutcomeCoefs {
  double aids = -0.90, alcoholism = -0.55, diabetes = -0.18, drug = -0.50,
         homeless = -0.65, male = -0.10, mental = -0.25, prisoner = 0.25,
         smoker = -0.25, tb_pulm = 0.35, tb_ext = 0.15;
  double age = -0.014;
  double hdi = 5.0;
};

// City-level structure.  sigma_t scales exposure heterogeneity; city cure
// effects are w_slope * t + w_resid * noise, so cities keen on the treatment
// have systematically poorer baseline cure and marginal models understate
// the effect.
constexpr double kSigmaT = 0.85;
constexpr double kWSlope = -1.0;
constexpr double kWResid = 0.08;

// Extra raw rows exercising every cohort filter.
constexpr int kExcludedByCode = 231;  // codes 5, 6, 9, 10
constexpr int kExcludedByAge = 74;    // included codes, under 11

int draw_index(RngStream& rng, int n) {
  return static_cast<int>(rng.uniform() * n);
}

// n values, `ones` of them 1, in deterministic shuffled order.
std::vector<int> exact_indicator(int n, int ones, RngStream& rng) {
  std::vector<int> v(static_cast<std::size_t>(n), 0);
  std::fill_n(v.begin(), ones, 1);
  for (int i = n - 1; i > 0; --i)
    std::swap(v[static_cast<std::size_t>(i)],
              v[static_cast<std::size_t>(draw_index(rng, i + 1))]);
  return v;
}

double logistic_draw(RngStream& rng) {
  const double u = rng.uniform_pos();
  return std::log(u / (1.0 - u));
}

// Marks the `count` largest latents with 1.
std::vector<int> top_count(const std::vector<double>& latent, int count) {
  std::vector<int> order(latent.size());
  std::iota(order.begin(), order.end(), 0);
  std::nth_element(order.begin(), order.begin() + count, order.end(),
                   [&](int a, int b) { return latent[a] > latent[b]; });
  std::vector<int> out(latent.size(), 0);
  for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(order[k])] = 1;
  return out;
}

// Ridge-stabilised maximum-likelihood logistic fit; close enough to the
// Bayesian posterior mean at this sample size for the self-check.
Eigen::VectorXd irls_logistic(const Eigen::MatrixXd& design,
                              const Eigen::VectorXd& y) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd eta = design * beta;
    const Eigen::VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
    Eigen::MatrixXd h = design.transpose() * w.asDiagonal() * design;
    h.diagonal().array() += 1e-8;
    const Eigen::VectorXd step =
        h.ldlt().solve(design.transpose() * (y - mu));
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  return beta;
}

struct City {
  long long id = 0;
  int size = 0;
  double hdi = 0, x = 0, y = 0, t_eff = 0, w_eff = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic TB cohort generator"};
  std::string out_dir = "data";
  std::uint64_t seed = 20160401;
  bool force = false;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "master seed");
  app.add_flag("--force", force, "overwrite existing files");
  CLI11_PARSE(app, argc, argv);

  const auto dir = std::filesystem::path(out_dir);
  const auto data_path = dir / "tb_synthetic.csv";
  const auto centroid_path = dir / "tb_centroids.csv";
  if (!force &&
      (std::filesystem::exists(data_path) ||
       std::filesystem::exists(centroid_path))) {
    fmt::print(stderr, "tb_synth: {} exists; pass --force to overwrite\n",
               data_path.string());
    return 2;
  }
  std::filesystem::create_directories(dir);

  // ---- cities ----------------------------------------------------------
  auto city_rng = RngStream::derive(seed, {1});
  std::vector<City> cities(kCities);
  cities[0].size = 3617;  // the state capital holds ~30% of the cohort
  {
    std::vector<double> w(kCities, 0.0);
    double total = 0.0;
    for (int k = 1; k < kCities; ++k) {
      w[static_cast<std::size_t>(k)] = std::pow(k + 1.0, -1.3);
      total += w[static_cast<std::size_t>(k)];
    }
    int assigned = 0;
    for (int k = 1; k < kCities; ++k) {
      const int target = kCohort - cities[0].size;
      int s = static_cast<int>(std::floor(
          w[static_cast<std::size_t>(k)] / total * target));
      s = std::max(s, 1);
      cities[static_cast<std::size_t>(k)].size = s;
      assigned += s;
    }
    // round-off lands on the capital
    cities[0].size = kCohort - assigned;
  }
  long long next_id = 3500000;
  for (auto& city : cities) {
    next_id += 3 + static_cast<long long>(city_rng.uniform() * 95.0);
    city.id = next_id;
    city.hdi =
        std::clamp(0.771 + 0.030 * city_rng.normal(), 0.580, 0.920);
    city.hdi = std::round(city.hdi * 1000.0) / 1000.0;
    city.x = std::round(city_rng.uniform() * 6000.0) / 10.0;
    city.y = std::round(city_rng.uniform() * 4500.0) / 10.0;
    city.t_eff = kSigmaT * city_rng.normal();
    city.w_eff = kWSlope * city.t_eff + kWResid * city_rng.normal();
  }
  cities[0].hdi = 0.805;

  // ---- cohort individuals ----------------------------------------------
  auto cov_rng = RngStream::derive(seed, {2});
  const auto aids = exact_indicator(kCohort, kAids, cov_rng);
  const auto alcoholism = exact_indicator(kCohort, kAlcoholism, cov_rng);
  const auto diabetes = exact_indicator(kCohort, kDiabetes, cov_rng);
  const auto drug = exact_indicator(kCohort, kDrugUse, cov_rng);
  const auto homeless = exact_indicator(kCohort, kHomeless, cov_rng);
  const auto male = exact_indicator(kCohort, kMale, cov_rng);
  const auto mental = exact_indicator(kCohort, kMental, cov_rng);
  const auto prisoner = exact_indicator(kCohort, kPrisoner, cov_rng);
  const auto smoker = exact_indicator(kCohort, kSmoker, cov_rng);
  std::vector<int> tb_type(kCohort, 3);
  std::fill_n(tb_type.begin(), kTbPulm, 1);
  std::fill_n(tb_type.begin() + kTbPulm, kTbExt, 2);
  for (int i = kCohort - 1; i > 0; --i)
    std::swap(tb_type[static_cast<std::size_t>(i)],
              tb_type[static_cast<std::size_t>(draw_index(cov_rng, i + 1))]);

  std::vector<int> city_of(kCohort);
  {
    int row = 0;
    for (int c = 0; c < kCities; ++c)
      for (int k = 0; k < cities[static_cast<std::size_t>(c)].size; ++k)
        city_of[static_cast<std::size_t>(row++)] = c;
  }
  std::vector<double> age(kCohort);
  for (auto& a : age) {
    double v = 35.4 + 17.3 * cov_rng.normal();
    while (v < 11.0 || v > 98.0) v = 35.4 + 17.3 * cov_rng.normal();
    a = std::round(v);
  }

  // ---- exposure and outcome --------------------------------------------
  const ExposureCoefs ac;
  const OutcomeCoefs oc;
  auto latent_rng = RngStream::derive(seed, {3});
  std::vector<double> z_latent(kCohort), y_eta(kCohort);
  for (int i = 0; i < kCohort; ++i) {
    const std::size_t s = static_cast<std::size_t>(i);
    const City& city = cities[static_cast<std::size_t>(city_of[s])];
    const double eta_z =
        ac.aids * aids[s] + ac.alcoholism * alcoholism[s] +
        ac.diabetes * diabetes[s] + ac.drug * drug[s] +
        ac.homeless * homeless[s] + ac.male * male[s] +
        ac.mental * mental[s] + ac.prisoner * prisoner[s] +
        ac.smoker * smoker[s] + ac.tb_pulm * (tb_type[s] == 1) +
        ac.tb_ext * (tb_type[s] == 2) + ac.age * (age[s] - 37.5) +
        ac.hdi * (city.hdi - 0.779) + city.t_eff;
    z_latent[s] = eta_z + logistic_draw(latent_rng);
    y_eta[s] = oc.aids * aids[s] + oc.alcoholism * alcoholism[s] +
               oc.diabetes * diabetes[s] + oc.drug * drug[s] +
               oc.homeless * homeless[s] + oc.male * male[s] +
               oc.mental * mental[s] + oc.prisoner * prisoner[s] +
               oc.smoker * smoker[s] + oc.tb_pulm * (tb_type[s] == 1) +
               oc.tb_ext * (tb_type[s] == 2) + oc.age * (age[s] - 37.5) +
               oc.hdi * (city.hdi - 0.779) + city.w_eff;
  }
  const std::vector<int> dot = top_count(z_latent, kTreated);

  std::vector<double> y_latent(kCohort);
  for (int i = 0; i < kCohort; ++i)
    y_latent[static_cast<std::size_t>(i)] =
        y_eta[static_cast<std::size_t>(i)] + logistic_draw(latent_rng);
  // cure counts are exact within each arm; the threshold gap realised
  // between arms is the causal effect the models estimate
  std::vector<int> cured(kCohort, 0);
  for (const int arm : {0, 1}) {
    std::vector<int> members;
    std::vector<double> latent;
    for (int i = 0; i < kCohort; ++i)
      if (dot[static_cast<std::size_t>(i)] == arm) {
        members.push_back(i);
        latent.push_back(y_latent[static_cast<std::size_t>(i)]);
      }
    const auto top =
        top_count(latent, arm == 1 ? kCuredTreated : kCuredControl);
    for (std::size_t k = 0; k < members.size(); ++k)
      if (top[k])
        cured[static_cast<std::size_t>(members[k])] = 1;
  }

  // ---- assemble raw rows -------------------------------------------------
  auto extras_rng = RngStream::derive(seed, {4});
  const auto ethnicity_of = [&extras_rng]() -> std::string {
    const double u = extras_rng.uniform();
    if (u < 0.55) return "A";
    if (u < 0.85) return "B";
    if (u < 0.95) return "C";
    return "D";
  };
  const auto failure_code = [&extras_rng]() {
    const double u = extras_rng.uniform();
    if (u < 0.52) return 2;
    if (u < 0.69) return 3;
    if (u < 0.85) return 4;
    if (u < 0.89) return 7;
    return 8;
  };
  constexpr double kMissing = 0.0987;  // per extra column

  std::vector<std::vector<std::string>> rows;
  auto emit = [&rows](int code, int z, double age_v, long long city_id,
                      int v_aids, int v_alc, int v_diab, int v_drug,
                      int v_home, int v_male, int v_ment, int v_pris,
                      int v_smoke, int type, double hdi,
                      const std::string& eth, const std::string& school,
                      const std::string& immig, const std::string& hw) {
    rows.push_back({std::to_string(code), std::to_string(z),
                    format_double(age_v), std::to_string(city_id),
                    std::to_string(v_aids), std::to_string(v_alc),
                    std::to_string(v_diab), std::to_string(v_drug),
                    std::to_string(v_home), std::to_string(v_male),
                    std::to_string(v_ment), std::to_string(v_pris),
                    std::to_string(v_smoke), std::to_string(type),
                    format_double(hdi), eth, school, immig, hw});
  };
  auto draw_extras = [&](std::string& eth, std::string& school,
                         std::string& immig, std::string& hw) {
    eth = extras_rng.uniform() < kMissing ? "" : ethnicity_of();
    school = extras_rng.uniform() < kMissing
                 ? ""
                 : std::to_string(1 + draw_index(extras_rng, 4));
    immig = extras_rng.uniform() < kMissing
                ? ""
                : std::to_string(extras_rng.uniform() < 0.02 ? 1 : 0);
    hw = extras_rng.uniform() < kMissing
             ? ""
             : std::to_string(extras_rng.uniform() < 0.015 ? 1 : 0);
  };

  for (int i = 0; i < kCohort; ++i) {
    const std::size_t s = static_cast<std::size_t>(i);
    const City& city = cities[static_cast<std::size_t>(city_of[s])];
    std::string eth, school, immig, hw;
    draw_extras(eth, school, immig, hw);
    emit(cured[s] ? 1 : failure_code(), dot[s], age[s], city.id, aids[s],
         alcoholism[s], diabetes[s], drug[s], homeless[s], male[s],
         mental[s], prisoner[s], smoker[s], tb_type[s], city.hdi, eth,
         school, immig, hw);
  }

  // rows the cohort filter must drop, spread over existing cities
  auto drop_rng = RngStream::derive(seed, {5});
  for (int k = 0; k < kExcludedByCode + kExcludedByAge; ++k) {
    const City& city =
        cities[static_cast<std::size_t>(draw_index(drop_rng, kCities))];
    const bool by_code = k < kExcludedByCode;
    const int code = by_code ? std::array{5, 6, 9, 10}[draw_index(drop_rng, 4)]
                             : 1 + draw_index(drop_rng, 3);
    const double age_v = by_code
                             ? std::round(12.0 + drop_rng.uniform() * 68.0)
                             : std::round(drop_rng.uniform() * 10.0);
    std::string eth, school, immig, hw;
    draw_extras(eth, school, immig, hw);
    emit(code, drop_rng.bernoulli(0.5) ? 1 : 0, age_v, city.id,
         drop_rng.bernoulli(0.06) ? 1 : 0, drop_rng.bernoulli(0.17) ? 1 : 0,
         drop_rng.bernoulli(0.06) ? 1 : 0, drop_rng.bernoulli(0.16) ? 1 : 0,
         drop_rng.bernoulli(0.03) ? 1 : 0, drop_rng.bernoulli(0.73) ? 1 : 0,
         drop_rng.bernoulli(0.01) ? 1 : 0, drop_rng.bernoulli(0.18) ? 1 : 0,
         drop_rng.bernoulli(0.25) ? 1 : 0, 1 + draw_index(drop_rng, 3),
         city.hdi, eth, school, immig, hw);
  }
  for (std::size_t i = rows.size() - 1; i > 0; --i)
    std::swap(rows[i], rows[static_cast<std::size_t>(
                           draw_index(drop_rng, static_cast<int>(i + 1)))]);

  const std::vector<std::string> header = {
      "situa_ence", "dot", "age", "city_id", "aids", "alcoholism",
      "diabetes", "drug_use", "homeless", "male", "mental_illness",
      "prisoner", "smoker", "tb_type", "hdi", "ethnicity", "schooling",
      "immigrant", "health_worker"};
  write_csv(data_path, header, rows);

  std::vector<std::vector<std::string>> centroid_rows;
  for (const auto& city : cities)
    centroid_rows.push_back({std::to_string(city.id), format_double(city.x),
                             format_double(city.y)});
  write_csv(centroid_path, {"city_id", "x", "y"}, centroid_rows);

  // ---- self-check ---------------------------------------------------------
  const auto report = load_tb(data_path);
  const auto cohort = derive_cohort(report.records);
  const Dataset with_geo = attach_geography(cohort.data, centroid_path);
  const Dataset& d = with_geo;
  const int treated = static_cast<int>(d.exposure.sum());
  const int total_cured = static_cast<int>(d.outcome.sum());
  const int cured_dot =
      static_cast<int>((d.outcome.array() * d.exposure.array()).sum());
  bool ok = true;
  auto expect = [&ok](const std::string& what, long long got,
                      long long want) {
    if (got != want) {
      fmt::print(stderr, "tb_synth: {} = {} (want {})\n", what, got, want);
      ok = false;
    }
  };
  expect("rows read", report.rows_read,
         kCohort + kExcludedByCode + kExcludedByAge);
  expect("invalid rows", report.rows_dropped_invalid, 0);
  expect("retained", cohort.exclusions.retained, kCohort);
  expect("excluded by code", cohort.exclusions.excluded_code,
         kExcludedByCode);
  expect("excluded by age", cohort.exclusions.excluded_age, kExcludedByAge);
  expect("treated", treated, kTreated);
  expect("cured", total_cured, kCuredTreated + kCuredControl);
  expect("cured among treated", cured_dot, kCuredTreated);
  expect("cities", d.clusters.num_clusters(), kCities);

  Eigen::MatrixXd design(d.num_units(), d.covariates.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(d.covariates.cols()) = d.covariates;
  const Eigen::VectorXd beta = irls_logistic(design, d.exposure);
  const Eigen::VectorXd ps =
      (1.0 / (1.0 + (-(design * beta).array()).exp())).matrix();
  const SmdReport balance = balance_table(d, {ps}, {"PS1"});
  fmt::print("covariate            unweighted   PS1-weighted\n");
  for (std::size_t c = 0; c < balance.covariates.size(); ++c) {
    fmt::print("{:<20} {:+.3f}       {:+.3f}\n", balance.covariates[c],
               balance.unweighted(static_cast<int>(c)),
               balance.weighted(static_cast<int>(c), 0));
    if (std::abs(balance.weighted(static_cast<int>(c), 0)) > 0.0095) {
      fmt::print(stderr, "tb_synth: weighted SMD for {} exceeds 0.0095\n",
                 balance.covariates[c]);
      ok = false;
    }
  }

  CohortSpec complete_case;
  complete_case.require_nonmissing = {"ethnicity", "schooling", "immigrant",
                                      "health_worker"};
  const auto cc = derive_cohort(report.records, complete_case);
  fmt::print(
      "cohort {} rows, {} treated, {} cured, {} cities; complete-case {} "
      "rows, {} cities\n",
      cohort.exclusions.retained, treated, total_cured,
      d.clusters.num_clusters(), cc.exclusions.retained,
      cc.data.clusters.num_clusters());
  const double age_mean = d.covariates.col(11).mean();
  const double age_sd = std::sqrt(
      (d.covariates.col(11).array() - age_mean).square().sum() /
      (d.num_units() - 1));
  const double hdi_mean = d.covariates.col(12).mean();
  fmt::print("age {:.1f} ({:.1f}); hdi {:.3f}\n", age_mean, age_sd, hdi_mean);
  if (!ok) return 1;
  fmt::print("wrote {} and {}\n", data_path.string(),
             centroid_path.string());
  return 0;
}
