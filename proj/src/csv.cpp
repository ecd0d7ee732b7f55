#include "mlate/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

#include "fmt/core.h"

namespace mlate {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return -1;
  return static_cast<int>(it - header.begin());
}

static std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));

  CsvTable table;
  std::string line;
  bool first = true;
  char delim = ',';
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      const auto commas = std::count(line.begin(), line.end(), ',');
      const auto semis = std::count(line.begin(), line.end(), ';');
      delim = semis > commas ? ';' : ',';
      table.header = split_line(line, delim);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_line(line, delim);
    if (fields.size() != table.header.size())
      throw std::runtime_error(
          fmt::format("{}: row {} has {} fields, header has {}", path.string(),
                      table.rows.size() + 2, fields.size(), table.header.size()));
    table.rows.push_back(std::move(fields));
  }
  if (first) throw std::runtime_error(fmt::format("{}: empty file", path.string()));
  return table;
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  auto emit = [&out](const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out << ',';
      const std::string& f = fields[i];
      if (f.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char c : f) {
          if (c == '"') out << '"';
          out << c;
        }
        out << '"';
      } else {
        out << f;
      }
    }
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("write_csv: row width does not match header");
    emit(row);
  }
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

}  // namespace mlate
