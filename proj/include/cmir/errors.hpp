#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmir {

/// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or option value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed (e.g. class id out of range).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Reduction or aggregation over an empty input.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Wrong number of inputs (e.g. one representation per modality expected).
class ArityError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or data file could not be read back.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite objective.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

}  // namespace cmir
