#pragma once

// RFC-4180 CSV reading/writing with header-driven column lookup.

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stopsafe::csv {

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  /// Reads the next record; false at end of input. Throws ParseError on an
  /// unterminated quoted field.
  bool next(std::vector<std::string>& fields);
  /// Number of records consumed so far (header counts as record 1).
  std::size_t records() const noexcept { return records_; }

 private:
  std::istream& in_;
  std::size_t records_ = 0;
};

/// Resolves required columns by name; unknown columns are ignored with a
/// warning naming `file`.
class Header {
 public:
  Header(std::vector<std::string> names, std::span<const std::string_view> required,
         std::string_view file);
  std::size_t index(std::string_view column) const;
  std::size_t width() const noexcept { return names_.size(); }

 private:
  std::vector<std::string> names_;
};

/// A data row bound to its header: typed accessors throw ParseError naming
/// the row and the field.
class Row {
 public:
  Row(const Header& header, const std::vector<std::string>& fields, std::size_t row);
  const std::string& text(std::string_view column) const;
  double number(std::string_view column) const;
  std::int64_t integer(std::string_view column) const;
  std::int64_t timestamp(std::string_view column) const;
  std::size_t row() const noexcept { return row_; }
  [[noreturn]] void fail(std::string_view column, const std::string& what) const;

 private:
  const Header& header_;
  const std::vector<std::string>& fields_;
  std::size_t row_;
};

std::string quote(std::string_view field);
void write_row(std::ostream& out, std::span<const std::string> fields);

}  // namespace stopsafe::csv
