#pragma once

#include <stdexcept>
#include <string>

namespace mint {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mismatched or otherwise impossible tensor shapes.
struct ShapeError : Error {
  using Error::Error;
};

/// Caller broke an operation's precondition (bad index, out-of-range layer, ...).
struct InputError : Error {
  using Error::Error;
};

/// An API contract was violated (double backward, empty keep-set, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Illegal game move.
struct RuleError : Error {
  using Error::Error;
};

/// Config file failed to parse or validate; carries a 1-based line number
/// (0 when the error is not tied to a specific line).
struct ConfigError : Error {
  int line;
  ConfigError(const std::string& msg, int line_no = 0) : Error(msg), line(line_no) {}
};

/// Optimizer aborted a step (non-finite gradient, divergence).
struct OptimError : Error {
  using Error::Error;
};

}  // namespace mint
