#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace rax {

// Minimal RFC-4180 reader: quoted fields, doubled quotes, embedded
// newlines, CRLF or LF line endings.
class CsvReader {
 public:
  explicit CsvReader(const std::filesystem::path& path);
  explicit CsvReader(std::istream& in);

  // Reads the next record into `fields`. Returns false at end of input.
  bool next(std::vector<std::string>& fields);

  // 1-based line number where the last returned record started.
  std::size_t record_line() const { return record_line_; }

 private:
  std::ifstream file_;
  std::istream* in_;
  std::size_t line_ = 1;
  std::size_t record_line_ = 0;
};

std::string csv_escape(const std::string& field);

}  // namespace rax
