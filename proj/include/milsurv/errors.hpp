#pragma once

#include <stdexcept>
#include <string>

namespace milsurv {

// Base for every error raised by the library. Callers that do not care about
// the category can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input text could not be parsed (CSV row, config line, PGM header).
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t row = 0, std::string column = {});
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

// A value parsed fine but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Inputs do not match what a model or operation expects (shape, modality).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Binary payload is malformed.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A statistic is undefined on the supplied data (no events, no comparable
// pairs, no cases or controls). Bootstrap treats this as a degenerate resample.
class EstimationError : public Error {
 public:
  using Error::Error;
};

class DegenerateFeatureError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Partial likelihood keeps increasing as a coefficient diverges.
class MonotoneLikelihoodError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

class ReliabilityError : public Error {
 public:
  using Error::Error;
};

class NestingError : public Error {
 public:
  using Error::Error;
};

class FoldDegeneracyError : public Error {
 public:
  FoldDegeneracyError(const std::string& msg, int fold);
  int fold() const noexcept { return fold_; }

 private:
  int fold_;
};

}  // namespace milsurv
