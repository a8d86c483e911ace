#pragma once

#include <stdexcept>
#include <string>

namespace tsadv {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad hyperparameter, malformed experiment spec.
struct ConfigError : Error {
  using Error::Error;
};

/// Dataset ingestion problems: missing file, ragged rows, non-numeric cells.
struct DataError : Error {
  using Error::Error;
};

/// Operand shapes do not conform; also model/data length mismatch.
struct ShapeError : Error {
  using Error::Error;
};

/// Numeric domain violations: division by zero, log of a non-positive
/// value, non-finite results.
struct NumericError : Error {
  using Error::Error;
};

/// Missing, corrupt or duplicated outcome files at report time.
struct ReportError : Error {
  using Error::Error;
};

}  // namespace tsadv
