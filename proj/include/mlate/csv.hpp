#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mlate {

// Minimal delimited-text support: enough for the long-format result tables
// this project writes and the raw epidemiological extracts it reads.  Not a
// general CSV library.

// Formats a double with shortest round-trip representation so that emitted
// tables are byte-identical across runs with the same seed.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

// Reads a delimited file; the delimiter is inferred from the header line
// (whichever of ',' or ';' occurs more often).  Handles double-quoted fields
// with embedded delimiters and doubled quotes; trims trailing CR.
CsvTable read_csv(const std::filesystem::path& path);

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace mlate
