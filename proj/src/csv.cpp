#include "qstep/csv.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "qstep/errors.hpp"

namespace qstep {

CsvWriter::CsvWriter(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  out_.open(path);
  if (!out_) {
    throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  }
}

void CsvWriter::header(const std::vector<std::string>& names) {
  begin_row();
  for (const auto& n : names) add(n);
  end_row();
}

CsvWriter& CsvWriter::begin_row() {
  row_open_ = true;
  first_field_ = true;
  return *this;
}

void CsvWriter::sep() {
  if (!first_field_) out_ << ',';
  first_field_ = false;
}

CsvWriter& CsvWriter::add(double value) {
  sep();
  out_ << fmt::format("{:.17g}", value);
  return *this;
}

CsvWriter& CsvWriter::add(int value) {
  sep();
  out_ << value;
  return *this;
}

CsvWriter& CsvWriter::add(long long value) {
  sep();
  out_ << value;
  return *this;
}

CsvWriter& CsvWriter::add(const std::string& value) {
  sep();
  out_ << value;
  return *this;
}

CsvWriter& CsvWriter::add_blank() {
  sep();
  return *this;
}

void CsvWriter::end_row() {
  out_ << '\n';
  row_open_ = false;
}

std::string format_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return {};
  std::vector<size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (size_t i = 0; i < row.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  }
  std::string out;
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      out += fmt::format("{:<{}}", row[i], width[i] + (i + 1 < row.size() ? 2 : 0));
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

}  // namespace qstep
