#pragma once

#include <stdexcept>
#include <string>

namespace clta {

// Every failure raised by the library derives from Error so callers can
// catch the whole family in one place (the experiment runner does).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };

// Config problems carry the offending key so the CLI can name it.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace clta
