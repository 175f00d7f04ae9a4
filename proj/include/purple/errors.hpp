#pragma once

#include <stdexcept>
#include <string>

namespace purple {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (JSON lines, config files, checkpoints).
class ParseError : public Error {
  public:
    using Error::Error;
};

/// A value violated a documented invariant (duplicate ids, empty pools, bad profiles).
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Matrix or embedding dimensions that do not line up.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Non-finite values or degenerate denominators.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Enumeration would exceed its size guard.
class GuardError : public Error {
  public:
    using Error::Error;
};

/// Reward service could not be reached after all retries.
class TransportError : public Error {
  public:
    using Error::Error;
};

/// Reward service reachable but misconfigured (no logprobs, bad status).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Reference tokens could not be located in the echoed token stream.
class AlignmentError : public Error {
  public:
    using Error::Error;
};

}  // namespace purple
