#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kstonet/common.hpp"

namespace kstonet {

// Shortest exact decimal form; identical doubles always print identically,
// which is what keeps re-run outputs byte-identical.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    double back = std::strtod(probe, nullptr);
    if (back == v) return probe;
  }
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("csv", "cannot open " + path);
  CsvTable table;
  std::string line;
  long line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      throw InputError("csv", path + ": line " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " fields, expected " +
                                  std::to_string(table.header.size()));
    table.rows.push_back(std::move(cells));
  }
  if (table.header.empty()) throw InputError("csv", path + ": empty file");
  return table;
}

inline double parse_double(const std::string& cell, const std::string& path, std::size_t row) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw InputError("csv", path + ": row " + std::to_string(row + 2) +
                                ": non-numeric value '" + cell + "'");
  return v;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw InputError("csv", "cannot write " + path);
  }

  void header(const std::vector<std::string>& names) { write_row_strings(names); }

  void row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    write_row_strings(cells);
  }

  void raw_row(const std::vector<std::string>& cells) { write_row_strings(cells); }

 private:
  void write_row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
};

}  // namespace kstonet
