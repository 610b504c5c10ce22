#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace milsurv::csv {

// Minimal CSV reader: comma separated, optional double quotes around a cell,
// "" inside quotes is a literal quote. No embedded newlines.
std::vector<std::string> split_line(std::string_view line, std::size_t row);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based line number in the source for each row (header is line 1).
  std::vector<std::size_t> line_numbers;

  // Index of `name` in the header, or -1.
  int column(std::string_view name) const;
};

Table read(std::istream& in);
Table read_file(const std::string& path);

std::string trim(std::string_view s);

double parse_double(const std::string& cell, std::size_t row, const std::string& column);
long long parse_int(const std::string& cell, std::size_t row, const std::string& column);
bool parse_flag(const std::string& cell, std::size_t row, const std::string& column);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

// Quotes the cell when it contains a comma, quote or leading/trailing space.
std::string escape(std::string_view cell);

}  // namespace milsurv::csv
