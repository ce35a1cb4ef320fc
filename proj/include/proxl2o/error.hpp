#pragma once

#include <stdexcept>
#include <string>

namespace proxl2o {

/// Base of every error the library raises. The `where` field names the
/// offending operation, row, or field so callers can report it verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string where, const std::string& what)
      : std::runtime_error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Raised when an iteration produces NaN/Inf where a finite value is required.
class NumericAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace proxl2o
