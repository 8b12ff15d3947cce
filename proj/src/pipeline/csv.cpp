#include "rscope/pipeline/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "rscope/errors.hpp"

namespace rscope::pipeline {

std::string format_number(double value) {
  if (value == 0.0) return "0";  // folds -0
  return fmt::format("{:.10g}", value);
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw ContractError(fmt::format("csv row has {} fields, header has {}", row.size(), header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::to_string() const {
  std::string out = fmt::format("{}\n", fmt::join(header_, ","));
  for (const auto& r : rows_) out += fmt::format("{}\n", fmt::join(r, ","));
  return out;
}

void CsvTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << to_string();
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

double parse_number(const std::string& text, std::size_t row) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError(fmt::format("'{}' is not a finite number", text), row);
  }
  return v;
}

std::size_t column_index(const CsvTable& table, const std::string& name) {
  const auto& h = table.header();
  auto it = std::find(h.begin(), h.end(), name);
  if (it == h.end()) throw ParseError("missing column '" + name + "'", 1);
  return static_cast<std::size_t>(it - h.begin());
}

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& required_columns,
                  const std::vector<std::string>& numeric_columns) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
  };
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw ParseError("missing header", 1);
  CsvTable table(split(line));
  std::vector<std::size_t> numeric;
  for (const auto& c : required_columns) column_index(table, c);
  for (const auto& c : numeric_columns) numeric.push_back(column_index(table, c));
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != table.header().size()) {
      throw ParseError(fmt::format("expected {} fields, found {}", table.header().size(), fields.size()), row);
    }
    for (auto i : numeric) parse_number(fields[i], row);
    table.add_row(std::move(fields));
  }
  return table;
}

}  // namespace rscope::pipeline
