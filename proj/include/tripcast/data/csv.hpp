#pragma once

#include <string>
#include <string_view>
#include <vector>

// Minimal helpers for the unquoted comma-separated files used by the
// pipeline (event logs, catalogs). Fields never contain commas.
namespace tripcast::csv {

std::vector<std::string> split(std::string_view line);

/// Strips a trailing '\r'.
std::string chomp(std::string_view line);

/// `where` and `column` prefix the ParseError message.
double parse_double(std::string_view cell, const std::string& where, const char* column);
long long parse_int(std::string_view cell, const std::string& where, const char* column);

}  // namespace tripcast::csv
