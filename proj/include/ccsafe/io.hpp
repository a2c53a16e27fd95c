#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ccsafe::io {

/// Splits a plain comma-separated line. Quoting is not supported; fields are trimmed.
std::vector<std::string> split_csv_line(std::string_view line);

std::optional<double> parse_double(std::string_view text);
std::optional<std::size_t> parse_size(std::string_view text);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

/// Accumulates CSV rows in memory; `save` writes atomically.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> row);
  std::size_t size() const { return rows_.size(); }
  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace ccsafe::io
