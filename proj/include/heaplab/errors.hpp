#pragma once

#include <stdexcept>
#include <string>

namespace heaplab {

/// Base of every error raised by the library.
class HeapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// State-space truncation did not converge within the doubling limit.
class TruncationFailure : public HeapError {
 public:
  using HeapError::HeapError;
};

/// Singular solve, overflow, or a non-SPD matrix.
class NumericalFailure : public HeapError {
 public:
  using HeapError::HeapError;
};

/// Laplace inversion error estimate exceeded the target.
class AccuracyFailure : public HeapError {
 public:
  using HeapError::HeapError;
};

/// Arguments outside the mathematical domain of an operation.
class DomainError : public HeapError {
 public:
  using HeapError::HeapError;
};

/// Malformed panel data; the message names the row and column.
class IngestionError : public HeapError {
 public:
  using HeapError::HeapError;
};

}  // namespace heaplab
