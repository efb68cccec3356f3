#pragma once

#include <stdexcept>
#include <string>

namespace tod {

/// Root of every exception raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented invariant (bad names, non-alternating turns).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed record in a corpus or database file. Carries the 1-based line.
class SchemaError : public ValidationError {
 public:
  SchemaError(const std::string& msg, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// A task was requested from a corpus whose annotation mask lacks it.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Connection-level failure talking to a remote backend.
class TransportError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace tod
