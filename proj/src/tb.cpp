#include "mlate/tb.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <unordered_map>

#include <fmt/core.h>
#include <json.hpp>

#include "mlate/csv.hpp"

namespace mlate {

namespace {

bool parse_long(const std::string& field, long long& out) {
  if (field.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stoll(field, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == field.size();
}

bool parse_double(const std::string& field, double& out) {
  if (field.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(field, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == field.size() && std::isfinite(out);
}

bool parse_indicator(const std::string& field, int& out) {
  long long v = 0;
  if (!parse_long(field, v) || (v != 0 && v != 1)) return false;
  out = static_cast<int>(v);
  return true;
}

}  // namespace

TbLoadReport load_tb(const std::filesystem::path& path,
                     const TbColumnMap& columns) {
  const CsvTable table = read_csv(path);

  const std::vector<std::pair<std::string, const std::string*>> required = {
      {"situa_ence", &columns.situa_ence},
      {"dot", &columns.dot},
      {"age", &columns.age},
      {"city_id", &columns.city_id},
      {"aids", &columns.aids},
      {"alcoholism", &columns.alcoholism},
      {"diabetes", &columns.diabetes},
      {"drug_use", &columns.drug_use},
      {"homeless", &columns.homeless},
      {"male", &columns.male},
      {"mental_illness", &columns.mental_illness},
      {"prisoner", &columns.prisoner},
      {"smoker", &columns.smoker},
      {"tb_type", &columns.tb_type},
      {"hdi", &columns.hdi},
  };
  std::unordered_map<std::string, int> index;
  std::vector<bool> is_required(table.header.size(), false);
  for (const auto& [role, name] : required) {
    const int col = table.column(*name);
    if (col < 0)
      throw std::runtime_error(fmt::format(
          "load_tb: required column '{}' ({}) not found in {}", *name, role,
          path.string()));
    index[role] = col;
    is_required[static_cast<std::size_t>(col)] = true;
  }

  TbLoadReport report;
  report.records.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    ++report.rows_read;
    RawTbRecord rec;
    long long code = 0, city = 0, tb = 0;
    const bool ok =
        parse_long(row[index["situa_ence"]], code) && code >= 1 &&
        code <= 10 && parse_indicator(row[index["dot"]], rec.dot) &&
        parse_double(row[index["age"]], rec.age) && rec.age >= 0.0 &&
        parse_long(row[index["city_id"]], city) &&
        parse_indicator(row[index["aids"]], rec.aids) &&
        parse_indicator(row[index["alcoholism"]], rec.alcoholism) &&
        parse_indicator(row[index["diabetes"]], rec.diabetes) &&
        parse_indicator(row[index["drug_use"]], rec.drug_use) &&
        parse_indicator(row[index["homeless"]], rec.homeless) &&
        parse_indicator(row[index["male"]], rec.male) &&
        parse_indicator(row[index["mental_illness"]], rec.mental_illness) &&
        parse_indicator(row[index["prisoner"]], rec.prisoner) &&
        parse_indicator(row[index["smoker"]], rec.smoker) &&
        parse_long(row[index["tb_type"]], tb) && tb >= 1 && tb <= 3 &&
        parse_double(row[index["hdi"]], rec.hdi) && rec.hdi > 0.0 &&
        rec.hdi < 1.0;
    if (!ok) {
      ++report.rows_dropped_invalid;
      continue;
    }
    rec.situa_ence = static_cast<int>(code);
    rec.city_id = city;
    rec.tb_type = static_cast<int>(tb);
    for (std::size_t c = 0; c < table.header.size(); ++c)
      if (!is_required[c]) rec.extras[table.header[c]] = row[c];
    report.records.push_back(std::move(rec));
  }
  return report;
}

void CohortSpec::validate() const {
  if (included_codes.empty())
    throw std::invalid_argument("CohortSpec: included_codes is empty");
  if (!(min_age >= 0.0))
    throw std::invalid_argument("CohortSpec: min_age must be non-negative");
  for (const int c : cure_codes)
    if (std::find(included_codes.begin(), included_codes.end(), c) ==
        included_codes.end())
      throw std::invalid_argument(fmt::format(
          "CohortSpec: cure code {} is not among the included codes", c));
}

std::string serialize_exclusions(const CohortExclusions& ledger) {
  nlohmann::json j;
  j["raw_rows"] = ledger.raw_rows;
  j["excluded"] = {{"code", ledger.excluded_code},
                   {"age", ledger.excluded_age},
                   {"missing", ledger.excluded_missing}};
  j["retained"] = ledger.retained;
  return j.dump(2) + "\n";
}

TbCohort derive_cohort(const std::vector<RawTbRecord>& records,
                       const CohortSpec& spec) {
  spec.validate();

  TbCohort cohort;
  cohort.exclusions.raw_rows = static_cast<int>(records.size());
  for (const auto& rec : records) {
    if (std::find(spec.included_codes.begin(), spec.included_codes.end(),
                  rec.situa_ence) == spec.included_codes.end()) {
      ++cohort.exclusions.excluded_code;
      continue;
    }
    if (rec.age < spec.min_age) {
      ++cohort.exclusions.excluded_age;
      continue;
    }
    bool missing = false;
    for (const auto& col : spec.require_nonmissing) {
      const auto it = rec.extras.find(col);
      if (it == rec.extras.end() || it->second.empty()) {
        missing = true;
        break;
      }
    }
    if (missing) {
      ++cohort.exclusions.excluded_missing;
      continue;
    }
    cohort.retained.push_back(rec);
  }
  const int n = static_cast<int>(cohort.retained.size());
  cohort.exclusions.retained = n;

  Dataset& data = cohort.data;
  data.covariate_names = {"aids",      "alcoholism",     "diabetes",
                          "drug_use",  "homeless",       "male",
                          "mental_illness", "prisoner",  "smoker",
                          "tb_pulm",   "tb_extpulm",     "age",
                          "hdi"};
  data.outcome.resize(n);
  data.exposure.resize(n);
  data.covariates.resize(n, static_cast<int>(data.covariate_names.size()));
  std::vector<long long> city_ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const RawTbRecord& rec = cohort.retained[static_cast<std::size_t>(i)];
    data.outcome(i) =
        std::find(spec.cure_codes.begin(), spec.cure_codes.end(),
                  rec.situa_ence) != spec.cure_codes.end()
            ? 1.0
            : 0.0;
    data.exposure(i) = rec.dot;
    data.covariates(i, 0) = rec.aids;
    data.covariates(i, 1) = rec.alcoholism;
    data.covariates(i, 2) = rec.diabetes;
    data.covariates(i, 3) = rec.drug_use;
    data.covariates(i, 4) = rec.homeless;
    data.covariates(i, 5) = rec.male;
    data.covariates(i, 6) = rec.mental_illness;
    data.covariates(i, 7) = rec.prisoner;
    data.covariates(i, 8) = rec.smoker;
    data.covariates(i, 9) = rec.tb_type == 1 ? 1.0 : 0.0;
    data.covariates(i, 10) = rec.tb_type == 2 ? 1.0 : 0.0;
    data.covariates(i, 11) = rec.age;
    data.covariates(i, 12) = rec.hdi;
    city_ids[static_cast<std::size_t>(i)] = rec.city_id;
  }
  if (spec.standardize_continuous && n > 1) {
    for (const int c : {11, 12}) {
      auto col = data.covariates.col(c);
      const double mean = col.mean();
      const double sd =
          std::sqrt((col.array() - mean).square().sum() / (n - 1));
      if (sd > 0.0) col = (col.array() - mean) / sd;
    }
  }
  data.clusters = build_cluster_map(city_ids);
  return cohort;
}

Dataset attach_geography(Dataset data,
                         const std::filesystem::path& centroid_path) {
  const CsvTable table = read_csv(centroid_path);
  const int id_col = table.column("city_id");
  const int x_col = table.column("x");
  const int y_col = table.column("y");
  if (id_col < 0 || x_col < 0 || y_col < 0)
    throw std::runtime_error(fmt::format(
        "attach_geography: {} must have columns city_id, x, y",
        centroid_path.string()));

  std::unordered_map<long long, std::pair<double, double>> lookup;
  for (const auto& row : table.rows) {
    long long id = 0;
    double x = 0.0, y = 0.0;
    if (!parse_long(row[static_cast<std::size_t>(id_col)], id) ||
        !parse_double(row[static_cast<std::size_t>(x_col)], x) ||
        !parse_double(row[static_cast<std::size_t>(y_col)], y))
      throw std::runtime_error(fmt::format(
          "attach_geography: malformed centroid row in {}",
          centroid_path.string()));
    lookup[id] = {x, y};
  }

  const int m = data.clusters.num_clusters();
  Eigen::MatrixXd centroids(m, 2);
  for (int j = 0; j < m; ++j) {
    const long long id = data.clusters.labels[static_cast<std::size_t>(j)];
    const auto it = lookup.find(id);
    if (it == lookup.end())
      throw std::runtime_error(fmt::format(
          "attach_geography: no centroid for city {} in {}", id,
          centroid_path.string()));
    centroids(j, 0) = it->second.first;
    centroids(j, 1) = it->second.second;
  }
  data.centroids = std::move(centroids);
  return data;
}

}  // namespace mlate
