#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mlate/types.hpp"

namespace mlate {

// One row of the raw TB notification extract.  `situa_ence` is the
// concluding-diagnosis code (1 cure, 2 abandon after 30+ days, 3 death by
// TB, 4 death by other causes, 5 transference, 6 change of diagnosis,
// 7 drug resistance, 8 change of scheme, 9 death during treatment,
// 10 primary abandon).  `tb_type` is 1 pulmonary, 2 extra-pulmonary,
// 3 both.  Columns the loader does not recognise are kept verbatim in
// `extras` keyed by header name.
struct RawTbRecord {
  int situa_ence = 0;
  int dot = 0;
  double age = 0.0;
  long long city_id = 0;
  int aids = 0;
  int alcoholism = 0;
  int diabetes = 0;
  int drug_use = 0;
  int homeless = 0;
  int male = 0;
  int mental_illness = 0;
  int prisoner = 0;
  int smoker = 0;
  int tb_type = 0;
  double hdi = 0.0;
  std::map<std::string, std::string> extras;
};

// Header names of the required columns.  Defaults follow the released
// extract; override any entry when loading a file with different labels.
struct TbColumnMap {
  std::string situa_ence = "situa_ence";
  std::string dot = "dot";
  std::string age = "age";
  std::string city_id = "city_id";
  std::string aids = "aids";
  std::string alcoholism = "alcoholism";
  std::string diabetes = "diabetes";
  std::string drug_use = "drug_use";
  std::string homeless = "homeless";
  std::string male = "male";
  std::string mental_illness = "mental_illness";
  std::string prisoner = "prisoner";
  std::string smoker = "smoker";
  std::string tb_type = "tb_type";
  std::string hdi = "hdi";
};

struct TbLoadReport {
  std::vector<RawTbRecord> records;
  int rows_read = 0;
  // Rows skipped because a required field was empty, unparsable, or outside
  // its dictionary (code not in 1..10, indicator not 0/1, tb_type not in
  // 1..3, age < 0, HDI outside (0,1)).
  int rows_dropped_invalid = 0;
};

// Reads a delimited extract (',' or ';', inferred from the header line).
// Throws std::runtime_error when the file is unreadable or a required
// column is absent.
TbLoadReport load_tb(const std::filesystem::path& path,
                     const TbColumnMap& columns = {});

// Cohort definition.  Rows are filtered in this order and each row counts
// toward exactly one exclusion reason: concluding code outside
// `included_codes`, then age below `min_age`, then an empty value in any
// extra column listed in `require_nonmissing` (the sensitivity cohort that
// drops rows with missing ethnicity/schooling/immigrant/health-worker
// fields).  The outcome is 1 when the code is in `cure_codes`, 0 for the
// rest of `included_codes`.
struct CohortSpec {
  double min_age = 11.0;
  std::vector<int> included_codes = {1, 2, 3, 4, 7, 8};
  std::vector<int> cure_codes = {1};
  std::vector<std::string> require_nonmissing = {};
  // Centre and scale the age and HDI columns over the retained rows.
  // Indicators always enter as 0/1.
  bool standardize_continuous = false;

  void validate() const;
};

struct CohortExclusions {
  int raw_rows = 0;
  int excluded_code = 0;
  int excluded_age = 0;
  int excluded_missing = 0;
  int retained = 0;
};

std::string serialize_exclusions(const CohortExclusions& ledger);

struct TbCohort {
  Dataset data;
  CohortExclusions exclusions;
  // The records behind `data`, in row order; re-deriving from these with the
  // same spec is a no-op.
  std::vector<RawTbRecord> retained;
};

// Order-preserving, deterministic.  The dataset covariates are the Table of
// baseline indicators plus the two TB-type indicators (reference category:
// pulmonary and extra-pulmonary combined), age, and city HDI.
TbCohort derive_cohort(const std::vector<RawTbRecord>& records,
                       const CohortSpec& spec = {});

// Attaches one (x, y) centroid per cluster from a delimited file with
// columns city_id, x, y.  Throws when a cluster in `data` has no centroid;
// centroids for unknown cities are ignored.  The maximum pairwise distance
// of the attached matrix drives the spatial decay prior downstream.
Dataset attach_geography(Dataset data,
                         const std::filesystem::path& centroid_path);

}  // namespace mlate
