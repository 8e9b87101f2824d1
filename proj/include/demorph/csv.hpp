#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace demorph::csv {

// Minimal comma-delimited tables: no quoting, fields are whitespace-trimmed,
// blank lines are ignored. Row numbers are 1-based file line numbers.
struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;
};

Table read(const std::filesystem::path& path, std::string_view module);

// Throws a data error unless `header` starts with `required` (extra trailing
// columns are allowed when allow_extra is set).
void expect_header(const Table& table, const std::vector<std::string>& required,
                   const std::filesystem::path& path, std::string_view module, bool allow_extra = false);

std::vector<std::string> split(std::string_view line, char delimiter = ',');
std::string trim(std::string_view text);

double parse_double(const std::string& text, const Row& row, std::string_view column, std::string_view module);

std::string format_double(double value);

}  // namespace demorph::csv
