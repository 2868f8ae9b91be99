#include "stopsafe/csv.hpp"

#include <algorithm>

#include "stopsafe/error.hpp"
#include "stopsafe/util.hpp"

namespace stopsafe::csv {

bool Reader::next(std::vector<std::string>& fields) {
  fields.clear();
  int c = in_.get();
  if (c == std::char_traits<char>::eof()) return false;
  ++records_;
  std::string field;
  bool quoted = false;
  bool after_quote = false;
  for (;; c = in_.get()) {
    if (c == std::char_traits<char>::eof()) {
      if (quoted) throw ParseError(records_ - 1, "", "unterminated quoted field");
      fields.push_back(std::move(field));
      return true;
    }
    char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
      after_quote = false;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && in_.peek() == '\n') in_.get();
      fields.push_back(std::move(field));
      return true;
    } else if (ch == '"' && field.empty() && !after_quote) {
      quoted = true;
    } else {
      field.push_back(ch);
    }
  }
}

Header::Header(std::vector<std::string> names, std::span<const std::string_view> required,
               std::string_view file)
    : names_(std::move(names)) {
  // tolerate a UTF-8 BOM on the first column
  if (!names_.empty() && names_[0].rfind("\xEF\xBB\xBF", 0) == 0) names_[0].erase(0, 3);
  for (auto col : required) {
    if (std::find(names_.begin(), names_.end(), col) == names_.end())
      throw ParseError(0, std::string(col), std::string(file) + ": missing required column");
  }
  for (const auto& n : names_) {
    if (std::find(required.begin(), required.end(), n) == required.end())
      log::warn(std::string(file) + ": ignoring unknown column '" + n + "'");
  }
}

std::size_t Header::index(std::string_view column) const {
  auto it = std::find(names_.begin(), names_.end(), column);
  if (it == names_.end()) throw ParseError(0, std::string(column), "no such column");
  return static_cast<std::size_t>(it - names_.begin());
}

Row::Row(const Header& header, const std::vector<std::string>& fields, std::size_t row)
    : header_(header), fields_(fields), row_(row) {
  if (fields.size() != header.width())
    throw ParseError(row, "", "expected " + std::to_string(header.width()) + " fields, got " +
                                  std::to_string(fields.size()));
}

const std::string& Row::text(std::string_view column) const {
  return fields_[header_.index(column)];
}

double Row::number(std::string_view column) const {
  auto v = parse_double(text(column));
  if (!v) fail(column, "not a number: '" + text(column) + "'");
  return *v;
}

std::int64_t Row::integer(std::string_view column) const {
  auto v = parse_int(text(column));
  if (!v) fail(column, "not an integer: '" + text(column) + "'");
  return *v;
}

std::int64_t Row::timestamp(std::string_view column) const {
  auto v = parse_iso8601(text(column));
  if (!v) fail(column, "not an ISO-8601 UTC timestamp: '" + text(column) + "'");
  return *v;
}

void Row::fail(std::string_view column, const std::string& what) const {
  throw ParseError(row_, std::string(column), what);
}

std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, std::span<const std::string> fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << quote(fields[i]);
  }
  out << '\n';
}

}  // namespace stopsafe::csv
