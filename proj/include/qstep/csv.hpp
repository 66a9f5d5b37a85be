#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace qstep {

/// Minimal CSV writer: comma-separated, one record per line, header row
/// optional. Values are formatted with enough digits to round-trip a double.
class CsvWriter {
 public:
  /// Opens `path` for writing, creating parent directories as needed.
  /// Throws DataError if the file cannot be opened.
  explicit CsvWriter(const std::filesystem::path& path);

  /// Writes a header row from column names.
  void header(const std::vector<std::string>& names);

  /// Starts a new record; subsequent add() calls append fields to it.
  CsvWriter& begin_row();
  CsvWriter& add(double value);
  CsvWriter& add(int value);
  CsvWriter& add(long long value);
  CsvWriter& add(const std::string& value);
  /// Appends an empty field (used where a column is not defined for a row).
  CsvWriter& add_blank();
  void end_row();

 private:
  std::ofstream out_;
  bool row_open_ = false;
  bool first_field_ = true;

  void sep();
};

/// Formats `rows` (first row = header) as a text table with space-aligned
/// columns, for human-readable stdout summaries next to the machine-readable
/// CSV files.
[[nodiscard]] std::string format_table(
    const std::vector<std::vector<std::string>>& rows);

}  // namespace qstep
