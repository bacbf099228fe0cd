#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace affakt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of the operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented type invariant (negative mass, bad simplex, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Cosine similarity is undefined for a zero-norm feature row.
class ZeroNormError : public Error {
 public:
  ZeroNormError(const std::string& which, std::size_t row)
      : Error("zero-norm feature row " + std::to_string(row) + " in " + which +
              " (cosine undefined)"),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Sinkhorn did not reach the marginal tolerance within its iteration budget.
class ConvergenceError : public Error {
 public:
  ConvergenceError(double violation, int iterations)
      : Error("sinkhorn: marginal violation " + std::to_string(violation) + " after " +
              std::to_string(iterations) + " iterations (retry with larger epsilon)"),
        violation_(violation) {}
  double violation() const noexcept { return violation_; }

 private:
  double violation_;
};

/// Non-finite intermediate values (overflow, NaN gradients).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Exact OT was asked to solve an instance above its size cap.
class SizeLimitError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Bad run configuration (unknown key, unparsable or out-of-range value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace affakt
