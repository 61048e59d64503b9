#pragma once

#include <stdexcept>
#include <string>

namespace hnt {

/// Base for every error raised by the toolkit. The CLI maps the three
/// categories below onto exit codes 1 (usage), 2 (data) and 3 (numerical).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Data error refinements, kept distinct so tests can tell them apart.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class InvariantError : public DataError {
 public:
  using DataError::DataError;
};

class UnsplittableError : public DataError {
 public:
  using DataError::DataError;
};

class ComparabilityError : public DataError {
 public:
  using DataError::DataError;
};

/// Raised when a metric is undefined on its input (e.g. AUROC with one class).
class UndefinedMetricError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace hnt
