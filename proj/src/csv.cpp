#include "demorph/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "demorph/error.hpp"

namespace demorph::csv {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view line, char delimiter) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

Table read(const std::filesystem::path& path, std::string_view module) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCategory::io, std::string(module), "cannot open " + path.string());
  }
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
    } else {
      table.rows.push_back({line_no, std::move(fields)});
    }
  }
  if (!have_header) {
    throw Error(ErrorCategory::data, std::string(module), "missing header row in " + path.string());
  }
  return table;
}

void expect_header(const Table& table, const std::vector<std::string>& required,
                   const std::filesystem::path& path, std::string_view module, bool allow_extra) {
  const bool size_ok = allow_extra ? table.header.size() >= required.size() : table.header.size() == required.size();
  bool ok = size_ok;
  for (std::size_t i = 0; ok && i < required.size(); ++i) ok = table.header[i] == required[i];
  if (!ok) {
    std::ostringstream msg;
    msg << "unexpected header in " << path.string() << "; expected ";
    for (std::size_t i = 0; i < required.size(); ++i) msg << (i ? "," : "") << required[i];
    throw Error(ErrorCategory::data, std::string(module), msg.str());
  }
}

double parse_double(const std::string& text, const Row& row, std::string_view column, std::string_view module) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCategory::data, std::string(module),
                "row " + std::to_string(row.line) + ": cannot parse " + std::string(column) + " '" + text + "'");
  }
  return value;
}

std::string format_double(double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

}  // namespace demorph::csv
