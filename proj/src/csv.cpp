#include "milsurv/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>

#include "milsurv/errors.hpp"

namespace milsurv::csv {

std::vector<std::string> split_line(std::string_view line, std::size_t row) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quote on row " + std::to_string(row), row);
  cells.push_back(std::move(cur));
  return cells;
}

int Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

Table read(std::istream& in) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto cells = split_line(line, lineno);
    for (auto& c : cells) c = trim(c);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError("row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(t.header.size()),
                       lineno);
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) throw ParseError("empty CSV (no header row)", 0);
  return t;
}

Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path, 0);
  return read(in);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

namespace {

[[noreturn]] void bad_cell(const std::string& what, const std::string& cell, std::size_t row,
                           const std::string& column) {
  throw ParseError("row " + std::to_string(row) + ", column '" + column + "': " + what + " '" + cell + "'",
                   row, column);
}

}  // namespace

double parse_double(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || cell.empty()) bad_cell("expected a number, got", cell, row, column);
  return v;
}

long long parse_int(const std::string& cell, std::size_t row, const std::string& column) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    bad_cell("expected an integer, got", cell, row, column);
  return v;
}

bool parse_flag(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell == "1" || cell == "true") return true;
  if (cell == "0" || cell == "false") return false;
  bad_cell("expected 0/1, got", cell, row, column);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string escape(std::string_view cell) {
  const bool needs = cell.find_first_of(",\"") != std::string_view::npos ||
                     (!cell.empty() && (cell.front() == ' ' || cell.back() == ' '));
  if (!needs) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace milsurv::csv
