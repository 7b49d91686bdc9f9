#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace treecarbon {

/// Comma-separated table with a header row. Fields are trimmed; quoting is
/// not supported.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws a validation error when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

/// Parses a double, naming the row and column on failure.
double parse_number(const std::string& text, std::size_t row, const std::string& column);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace treecarbon
