#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nowcast {

/// Comma-separated table with a header row. No quoting: fields never contain
/// commas in the formats this project reads and writes.
class CsvTable {
 public:
  static CsvTable read(const std::filesystem::path& path);
  static CsvTable parse(std::string_view text, const std::string& source = "<memory>");

  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t rows() const noexcept { return rows_.size(); }
  /// Column index by name; UsageError if the column is missing.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const { return index_.count(name) > 0; }

  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  double number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

  /// Requires the header to contain every name in `required`.
  void require_columns(const std::vector<std::string>& required) const;

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

/// Writes `text` to `path`, throwing IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace nowcast
