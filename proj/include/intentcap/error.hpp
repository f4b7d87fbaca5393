#pragma once

#include <stdexcept>

namespace intentcap {

// Base for all toolkit errors. The CLI maps these onto exit codes:
// validation/contract problems -> 1, I/O and parse failures -> 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };   // tensor shape mismatch
struct ConfigError : Error { using Error::Error; };      // invalid module configuration
struct ValidationError : Error { using Error::Error; };  // dataset invariant violation
struct InputError : Error { using Error::Error; };       // inconsistent caller-supplied data
struct EvalError : Error { using Error::Error; };        // non-finite value during evaluation
struct ParseError : Error { using Error::Error; };       // malformed file content
struct IoError : Error { using Error::Error; };          // filesystem failure

}  // namespace intentcap
