#include "nowcast/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nowcast/error.hpp"

namespace nowcast {

namespace {

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    out.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

CsvTable CsvTable::read(const std::filesystem::path& path) { return parse(read_text_file(path), path.string()); }

CsvTable CsvTable::parse(std::string_view text, const std::string& source) {
  CsvTable table;
  table.source_ = source;
  std::size_t pos = 0;
  bool have_header = false;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (!have_header) {
      table.header_ = std::move(fields);
      for (std::size_t i = 0; i < table.header_.size(); ++i) table.index_[table.header_[i]] = i;
      have_header = true;
      continue;
    }
    if (fields.size() != table.header_.size()) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header_.size()) + " fields, got " + std::to_string(fields.size()));
    }
    table.rows_.push_back(std::move(fields));
  }
  if (!have_header) throw UsageError(source + ": missing header row");
  return table;
}

std::size_t CsvTable::column(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError(source_ + ": missing column '" + name + "'");
  return it->second;
}

void CsvTable::require_columns(const std::vector<std::string>& required) const {
  for (const auto& name : required) column(name);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const auto& s = rows_[row][col];
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError(source_ + ": row " + std::to_string(row + 1) + ", column '" + header_[col] +
                     "': not a number: '" + s + "'");
  }
  return v;
}

long long CsvTable::integer(std::size_t row, std::size_t col) const {
  const auto& s = rows_[row][col];
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError(source_ + ": row " + std::to_string(row + 1) + ", column '" + header_[col] +
                     "': not an integer: '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace nowcast
