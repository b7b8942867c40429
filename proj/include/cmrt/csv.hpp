#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmrt/error.hpp"

namespace cmrt::csv {

/// Plain comma-separated table; no quoting (none of our artifacts need it).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error(ErrorKind::format, "csv: missing column '" + name + "'");
  }
};

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline Table parse(std::istream& is, const std::string& where = "csv") {
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::format, where + ": empty file");
  t.header = split_line(line);
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto row = split_line(line);
    if (row.size() != t.header.size()) {
      throw Error(ErrorKind::format, where + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                                         std::to_string(row.size()) + " cells, header has " +
                                         std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return parse(is, path.string());
}

inline double to_double(const std::string& s, const std::string& where = "csv") {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error(ErrorKind::format, where + ": not a number '" + s + "'");
  return v;
}

}  // namespace cmrt::csv
