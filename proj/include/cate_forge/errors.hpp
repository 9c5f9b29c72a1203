#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cate_forge {

/// Base class for every error raised by the library. The exit code is what
/// the command-line tool returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

/// Malformed or out-of-contract input (non-finite values, size mismatches,
/// non-PSD matrices, bad configuration).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Input that is well-formed but for which the requested quantity is not
/// identified, e.g. two identical site CATEs in the two-site risk formula.
class DegenerateInput : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// A request outside what the method supports (e.g. two-site risk with S != 2).
class Unsupported : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// CSV/JSON parse failure. Rows are 1-based data rows (the header is row 0).
class ParseError : public InvalidInput {
 public:
  ParseError(const std::string& path, std::size_t row, const std::string& column,
             const std::string& what);

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Iterative numerical procedure failed to converge.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t iterations);

  int exit_code() const noexcept override { return 3; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

}  // namespace cate_forge
