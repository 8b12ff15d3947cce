#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rscope::pipeline {

// Fixed-format number rendering so CSV bytes never depend on locale or
// stream state.
std::string format_number(double value);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Parses a comma-separated file with a header row. Throws ParseError with
// the 1-based row number on ragged rows; `numeric_columns` must parse as
// finite numbers.
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& required_columns,
                  const std::vector<std::string>& numeric_columns = {});

std::size_t column_index(const CsvTable& table, const std::string& name);
double parse_number(const std::string& text, std::size_t row);

}  // namespace rscope::pipeline
