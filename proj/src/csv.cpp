#include "rax/csv.hpp"

#include "rax/error.hpp"

namespace rax {

CsvReader::CsvReader(const std::filesystem::path& path) : file_(path, std::ios::binary), in_(&file_) {
  if (!file_) throw DataError("unreadable_file", "cannot open " + path.string());
}

CsvReader::CsvReader(std::istream& in) : in_(&in) {}

bool CsvReader::next(std::vector<std::string>& fields) {
  fields.clear();
  std::streambuf* sb = in_->rdbuf();
  int c = sb->sgetc();
  if (c == std::char_traits<char>::eof()) return false;
  record_line_ = line_;
  std::string field;
  bool quoted = false;
  bool field_started_quoted = false;
  for (;;) {
    c = sb->sbumpc();
    if (c == std::char_traits<char>::eof()) {
      fields.push_back(std::move(field));
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (sb->sgetc() == '"') {
          sb->sbumpc();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line_;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && field.empty() && !field_started_quoted) {
      quoted = true;
      field_started_quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
      field_started_quoted = false;
    } else if (ch == '\r') {
      if (sb->sgetc() == '\n') sb->sbumpc();
      ++line_;
      fields.push_back(std::move(field));
      return true;
    } else if (ch == '\n') {
      ++line_;
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(ch);
    }
  }
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace rax
