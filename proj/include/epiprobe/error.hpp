#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epiprobe {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input text that does not follow its declared format. `line` is 1-based, 0 when unknown.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  std::size_t line;
};

struct ValidationError : Error {
  using Error::Error;
};

struct PreconditionError : Error {
  using Error::Error;
};

// Network failure, exhausted retries, or an HTTP status that is not recoverable.
struct TransportError : Error {
  TransportError(const std::string& what, int status = 0) : Error(what), status(status) {}
  int status;
};

// The remote side answered, but not with something we understand.
struct ProtocolError : Error {
  using Error::Error;
};

struct CapabilityError : Error {
  using Error::Error;
};

}  // namespace epiprobe
