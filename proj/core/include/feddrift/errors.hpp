#pragma once

#include <stdexcept>
#include <string>

namespace feddrift {

/// Base class for all feddrift errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or written.
struct IoError : Error {
  using Error::Error;
};

/// Byte stream does not follow the expected file format.
struct FormatError : Error {
  using Error::Error;
};

/// Paired inputs disagree (e.g. image/label record counts).
struct ConsistencyError : Error {
  using Error::Error;
};

/// A sample pool cannot satisfy the requested partition sizes.
struct CapacityError : Error {
  using Error::Error;
};

/// A concept map cannot support the requested drift injection.
struct ConceptError : Error {
  using Error::Error;
};

/// Vector or matrix dimensions do not match.
struct ShapeError : Error {
  using Error::Error;
};

/// Too few observations for the requested factorization.
struct RankError : Error {
  using Error::Error;
};

/// Too few values to compute the requested statistics.
struct StatsError : Error {
  using Error::Error;
};

/// Invalid configuration, or an operation run before its prerequisites.
struct ConfigError : Error {
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

}  // namespace feddrift
