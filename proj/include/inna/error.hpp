#pragma once

#include <stdexcept>
#include <string>

namespace inna {

// Exit codes used by the command line tool.
enum class ExitCode : int {
  success = 0,
  validation = 2,
  numerical = 3,
  propriety = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

// Bad input: malformed files, domain violations, structural problems.
class ValidationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::validation; }
};

class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class RankError : public ValidationError {
 public:
  RankError(std::string column, const std::string& what)
      : ValidationError(what), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures of the numerical machinery: singular systems, indefinite
// curvature, empty sampling grids.
class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numerical; }
};

class ConditioningError : public NumericalError {
 public:
  ConditioningError(const std::string& what, double smallest_singular_value)
      : NumericalError(what), sigma_min_(smallest_singular_value) {}
  double smallest_singular_value() const noexcept { return sigma_min_; }

 private:
  double sigma_min_;
};

class ProprietyError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::propriety; }
};

}  // namespace inna
