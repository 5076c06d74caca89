#include "tripcast/data/csv.hpp"

#include <charconv>
#include <cmath>

#include "tripcast/core/error.hpp"

namespace tripcast::csv {

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.emplace_back(line.substr(start));
      return cells;
    }
    cells.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string chomp(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return std::string(line);
}

double parse_double(std::string_view cell, const std::string& where, const char* column) {
  double v = 0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError(where + ": column '" + column + "' is not a number: '" +
                     std::string(cell) + "'");
  return v;
}

long long parse_int(std::string_view cell, const std::string& where, const char* column) {
  long long v = 0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw ParseError(where + ": column '" + column + "' is not an integer: '" +
                     std::string(cell) + "'");
  return v;
}

}  // namespace tripcast::csv
