#pragma once

#include <stdexcept>
#include <string>

namespace hatenorm {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSpanError : public Error {
 public:
  using Error::Error;
};

// A record or argument violates a data-model invariant. `field()` names the
// offending field when one is known.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DivergedTrainingError : public Error {
 public:
  using Error::Error;
};

// A statistic is mathematically undefined for the given input.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class ModelFormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace hatenorm
