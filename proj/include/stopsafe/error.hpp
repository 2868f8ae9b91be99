#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stopsafe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: carries the 1-based data row (0 = header/file level) and
// the offending column.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string field, const std::string& what)
      : Error(format(row, field, what)), row_(row), field_(std::move(field)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(std::size_t row, const std::string& field,
                            const std::string& what) {
    std::string msg = "row " + std::to_string(row);
    if (!field.empty()) msg += " field '" + field + "'";
    return msg + ": " + what;
  }

  std::size_t row_;
  std::string field_;
};

// Model fitting failure. `trace` holds the optimizer history for diagnosis.
class FitError : public Error {
 public:
  FitError(const std::string& what, std::string trace = {})
      : Error(what), trace_(std::move(trace)) {}
  const std::string& trace() const noexcept { return trace_; }

 private:
  std::string trace_;
};

}  // namespace stopsafe
