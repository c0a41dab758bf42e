#pragma once
#include <stdexcept>
#include <string>

namespace dcae {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Wrong tensor or argument shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Malformed, truncated or unsupported files.
struct FormatError : Error {
  using Error::Error;
};

// Entropy-coded stream failed a consistency check.
struct CorruptStreamError : FormatError {
  using FormatError::FormatError;
};

// Invalid model or profile configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite numerics or violated runtime invariants.
struct IntegrityError : Error {
  using Error::Error;
};

// Bad command line or user input.
struct UsageError : Error {
  using Error::Error;
};

}  // namespace dcae
