#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seedet/error.hpp"

namespace seedet::csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// Reads a CSV whose first line must equal `header`; returns data rows.
inline std::vector<std::vector<std::string>> read_table(const std::filesystem::path& path,
                                                        const std::vector<std::string>& header) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || split(line) != header) throw IoError("unexpected CSV header in " + path.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto row = split(line);
    if (row.size() != header.size()) throw IoError("malformed row in " + path.string() + ": " + line);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double to_double(const std::string& s, const std::filesystem::path& path) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("bad number '" + s + "' in " + path.string());
  }
  return v;
}

}  // namespace seedet::csv
