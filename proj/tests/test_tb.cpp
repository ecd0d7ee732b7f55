#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "mlate/correlation.hpp"
#include "mlate/tb.hpp"

using namespace mlate;

namespace {

std::filesystem::path write_temp(const std::string& stem,
                                 const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("mlate_" + stem + ".csv");
  std::ofstream out(path);
  out << content;
  return path;
}

const std::string kHeader =
    "situa_ence,dot,age,city_id,aids,alcoholism,diabetes,drug_use,homeless,"
    "male,mental_illness,prisoner,smoker,tb_type,hdi,ethnicity\n";

std::string row(int code, const std::string& age, int type,
                const std::string& hdi, const std::string& ethnicity,
                const std::string& male = "1") {
  return std::to_string(code) + ",1," + age + ",3550308,0,1,0,0,0," + male +
         ",0,0,1," + std::to_string(type) + "," + hdi + "," + ethnicity +
         "\n";
}

RawTbRecord make_rec(int code, double age, long long city, int dot = 1,
                     int tb_type = 1) {
  RawTbRecord rec;
  rec.situa_ence = code;
  rec.dot = dot;
  rec.age = age;
  rec.city_id = city;
  rec.male = 1;
  rec.smoker = code % 2;
  rec.tb_type = tb_type;
  rec.hdi = 0.7 + 0.001 * static_cast<double>(city % 100);
  return rec;
}

}  // namespace

TEST_CASE("loader types rows, keeps extras, and counts invalid ones") {
  const std::string good1 = row(1, "34.5", 1, "0.805", "parda");
  const std::string good2 = row(2, "11", 3, "0.7", "");
  const auto path = write_temp(
      "load", kHeader + good1 + good2 +
                  row(11, "20", 1, "0.8", "a") +   // code outside 1..10
                  row(3, "x", 1, "0.8", "a") +     // unparsable age
                  row(3, "-4", 1, "0.8", "a") +    // negative age
                  row(3, "20", 5, "0.8", "a") +    // tb_type outside 1..3
                  row(3, "20", 1, "1.2", "a") +    // hdi outside (0,1)
                  row(3, "20", 1, "0.8", "a", "2"));  // indicator not 0/1

  const auto report = load_tb(path);
  CHECK(report.rows_read == 8);
  CHECK(report.rows_dropped_invalid == 6);
  REQUIRE(report.records.size() == 2);

  const auto& rec = report.records[0];
  CHECK(rec.situa_ence == 1);
  CHECK(rec.dot == 1);
  CHECK(rec.age == 34.5);
  CHECK(rec.city_id == 3550308);
  CHECK(rec.alcoholism == 1);
  CHECK(rec.aids == 0);
  CHECK(rec.smoker == 1);
  CHECK(rec.tb_type == 1);
  CHECK(rec.hdi == 0.805);
  REQUIRE(rec.extras.size() == 1);
  CHECK(rec.extras.at("ethnicity") == "parda");
  CHECK(report.records[1].extras.at("ethnicity").empty());
  std::remove(path.c_str());
}

TEST_CASE("loader handles semicolons, custom names, and hard errors") {
  std::string semi = kHeader + row(1, "30", 2, "0.75", "x");
  for (auto& c : semi)
    if (c == ',') c = ';';
  const auto semi_path = write_temp("semi", semi);
  const auto semi_report = load_tb(semi_path);
  REQUIRE(semi_report.records.size() == 1);
  CHECK(semi_report.records[0].tb_type == 2);
  std::remove(semi_path.c_str());

  // same file, renamed outcome column, found through the map
  std::string renamed = kHeader + row(4, "30", 1, "0.75", "x");
  renamed.replace(renamed.find("situa_ence"), 10, "SITUA_ENCE");
  const auto renamed_path = write_temp("renamed", renamed);
  CHECK_THROWS_AS(load_tb(renamed_path), std::runtime_error);
  TbColumnMap map;
  map.situa_ence = "SITUA_ENCE";
  CHECK(load_tb(renamed_path, map).records.at(0).situa_ence == 4);
  std::remove(renamed_path.c_str());

  const auto empty_path = write_temp("empty", kHeader);
  const auto empty_report = load_tb(empty_path);
  CHECK(empty_report.records.empty());
  CHECK(empty_report.rows_read == 0);
  CHECK(empty_report.rows_dropped_invalid == 0);
  std::remove(empty_path.c_str());

  CHECK_THROWS_AS(load_tb("/nonexistent/tb.csv"), std::runtime_error);
}

TEST_CASE("cohort filter applies code, age, and missingness in order") {
  std::vector<RawTbRecord> records;
  for (int code = 1; code <= 10; ++code)
    records.push_back(make_rec(code, 30.0, 100 + code));
  records.push_back(make_rec(1, 10.99, 200));  // under age
  records.push_back(make_rec(1, 11.0, 201));   // exactly at the minimum
  records.push_back(make_rec(10, 5.0, 202));   // fails code and age: code wins

  const auto cohort = derive_cohort(records);
  const auto& ex = cohort.exclusions;
  CHECK(ex.raw_rows == 13);
  CHECK(ex.excluded_code == 5);  // codes 5, 6, 9, 10 and the double-failure
  CHECK(ex.excluded_age == 1);
  CHECK(ex.excluded_missing == 0);
  CHECK(ex.retained == 7);
  CHECK(ex.excluded_code + ex.excluded_age + ex.excluded_missing +
            ex.retained ==
        ex.raw_rows);

  // order-preserving: retained cities in input order
  const std::vector<long long> expect_cities = {101, 102, 103, 104,
                                                107, 108, 201};
  REQUIRE(cohort.retained.size() == expect_cities.size());
  for (std::size_t i = 0; i < expect_cities.size(); ++i)
    CHECK(cohort.retained[i].city_id == expect_cities[i]);

  // cure maps to 1, every other included code to 0
  const Eigen::VectorXd& y = cohort.data.outcome;
  CHECK(y(0) == 1.0);
  for (int i = 1; i < 6; ++i) CHECK(y(i) == 0.0);
  CHECK(y(6) == 1.0);

  const auto json = nlohmann::json::parse(serialize_exclusions(ex));
  CHECK(json["raw_rows"] == 13);
  CHECK(json["excluded"]["code"] == 5);
  CHECK(json["retained"] == 7);
}

TEST_CASE("missingness filter keys on the listed extra columns") {
  std::vector<RawTbRecord> records(3, make_rec(1, 40.0, 10));
  records[0].extras["ethnicity"] = "parda";
  records[1].extras["ethnicity"] = "";  // present but empty
  // records[2] lacks the key entirely

  CohortSpec spec;
  spec.require_nonmissing = {"ethnicity"};
  const auto cohort = derive_cohort(records, spec);
  CHECK(cohort.exclusions.excluded_missing == 2);
  CHECK(cohort.exclusions.retained == 1);

  // without the flag nothing is dropped
  CHECK(derive_cohort(records).exclusions.retained == 3);
}

TEST_CASE("cohort assembles the design and re-deriving is a no-op") {
  std::vector<RawTbRecord> records;
  records.push_back(make_rec(1, 25.0, 30, 1, 1));
  records.push_back(make_rec(2, 40.0, 10, 0, 2));
  records.push_back(make_rec(3, 60.0, 20, 1, 3));
  records.push_back(make_rec(6, 50.0, 20));  // dropped

  const auto cohort = derive_cohort(records);
  const Dataset& d = cohort.data;
  d.validate();
  CHECK(d.exposure_is_binary());
  REQUIRE(d.covariate_names.size() == 13);
  CHECK(d.covariate_names[0] == "aids");
  CHECK(d.covariate_names[9] == "tb_pulm");
  CHECK(d.covariate_names[10] == "tb_extpulm");
  CHECK(d.covariate_names[11] == "age");
  CHECK(d.covariate_names[12] == "hdi");

  // tb_type 1 -> (1,0); 2 -> (0,1); 3 -> (0,0) with "both" as reference
  CHECK(d.covariates(0, 9) == 1.0);
  CHECK(d.covariates(0, 10) == 0.0);
  CHECK(d.covariates(1, 9) == 0.0);
  CHECK(d.covariates(1, 10) == 1.0);
  CHECK(d.covariates(2, 9) == 0.0);
  CHECK(d.covariates(2, 10) == 0.0);
  CHECK(d.covariates(0, 11) == 25.0);
  CHECK(d.exposure(1) == 0.0);

  // clusters relabeled in ascending city order
  REQUIRE(d.clusters.num_clusters() == 3);
  CHECK(d.clusters.labels == std::vector<long long>{10, 20, 30});
  CHECK(d.clusters.assignment(0) == 2);

  const auto again = derive_cohort(cohort.retained);
  CHECK(again.exclusions.raw_rows == again.exclusions.retained);
  CHECK((again.data.outcome.array() == d.outcome.array()).all());
  CHECK((again.data.exposure.array() == d.exposure.array()).all());
  CHECK((again.data.covariates.array() == d.covariates.array()).all());
}

TEST_CASE("continuous columns can be standardized over the retained rows") {
  std::vector<RawTbRecord> records;
  for (int i = 0; i < 40; ++i) {
    auto rec = make_rec(i % 2 == 0 ? 1 : 2, 20.0 + i, 5 + i % 4);
    rec.hdi = 0.6 + 0.005 * i;
    records.push_back(rec);
  }
  CohortSpec spec;
  spec.standardize_continuous = true;
  const auto cohort = derive_cohort(records, spec);
  for (const int c : {11, 12}) {
    const auto col = cohort.data.covariates.col(c);
    const int n = static_cast<int>(col.size());
    CHECK(std::abs(col.mean()) < 1e-12);
    const double var = (col.array() - col.mean()).square().sum() / (n - 1);
    CHECK(var == doctest::Approx(1.0));
  }
  // indicators untouched
  CHECK(cohort.data.covariates.col(5).maxCoeff() == 1.0);
  CHECK(cohort.data.covariates.col(0).minCoeff() == 0.0);
}

TEST_CASE("cohort spec validation") {
  CohortSpec bad_cure;
  bad_cure.cure_codes = {9};
  CHECK_THROWS_AS(derive_cohort({}, bad_cure), std::invalid_argument);
  CohortSpec bad_age;
  bad_age.min_age = -1.0;
  CHECK_THROWS_AS(derive_cohort({}, bad_age), std::invalid_argument);
  CohortSpec no_codes;
  no_codes.included_codes = {};
  no_codes.cure_codes = {};
  CHECK_THROWS_AS(derive_cohort({}, no_codes), std::invalid_argument);
}

TEST_CASE("geography attaches centroids by cluster label and flags gaps") {
  std::vector<RawTbRecord> records;
  records.push_back(make_rec(1, 30.0, 30));
  records.push_back(make_rec(2, 30.0, 10));
  records.push_back(make_rec(1, 30.0, 20));
  records.push_back(make_rec(2, 30.0, 10));
  const auto cohort = derive_cohort(records);

  const auto path = write_temp("centroids",
                               "city_id,x,y\n"
                               "10,0,0\n"
                               "20,3,4\n"
                               "30,-1,1\n"
                               "99,50,50\n");  // unknown city: ignored
  const Dataset with_geo = attach_geography(cohort.data, path);
  REQUIRE(with_geo.centroids.has_value());
  const Eigen::MatrixXd& c = *with_geo.centroids;
  REQUIRE(c.rows() == 3);
  CHECK(c(0, 0) == 0.0);   // city 10
  CHECK(c(1, 1) == 4.0);   // city 20
  CHECK(c(2, 0) == -1.0);  // city 30
  with_geo.validate();

  // brute-force pairwise scan agrees with the library max distance
  double best = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      best = std::max(best, (c.row(a) - c.row(b)).norm());
  CHECK(max_pairwise_distance(c) == doctest::Approx(best));
  CHECK(best == doctest::Approx(std::sqrt(16.0 + 9.0)));  // (3,4) vs (-1,1)

  const auto short_path = write_temp("centroids_short",
                                     "city_id,x,y\n10,0,0\n30,-1,1\n");
  CHECK_THROWS_WITH_AS(attach_geography(cohort.data, short_path),
                       doctest::Contains("no centroid for city 20"),
                       std::runtime_error);
  const auto bad_path = write_temp("centroids_bad",
                                   "city_id,x,y\n10,zero,0\n");
  CHECK_THROWS_AS(attach_geography(cohort.data, bad_path),
                  std::runtime_error);
  const auto no_col = write_temp("centroids_nocol", "id,x,y\n10,0,0\n");
  CHECK_THROWS_AS(attach_geography(cohort.data, no_col), std::runtime_error);

  // degenerate geography still attaches; distance collapses to zero
  const auto flat = write_temp("centroids_flat",
                               "city_id,x,y\n10,2,2\n20,2,2\n30,2,2\n");
  const Dataset all_equal = attach_geography(cohort.data, flat);
  CHECK(max_pairwise_distance(*all_equal.centroids) == 0.0);

  for (const auto& p : {path, short_path, bad_path, no_col, flat})
    std::remove(p.c_str());
}
