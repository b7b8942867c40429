#pragma once

#include <stdexcept>
#include <string>

namespace cmrt {

/// Broad failure class; the CLI maps each one to a distinct exit code.
enum class ErrorKind {
  precondition,  // argument outside an operation's domain
  shape,         // tensor or array shapes disagree
  format,        // malformed file contents
  io,            // filesystem failure
  config,        // configuration validation
  numeric,       // NaN/Inf encountered
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::shape: return "shape";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

inline void require(bool cond, const std::string& what, ErrorKind kind = ErrorKind::precondition) {
  if (!cond) throw Error(kind, what);
}

}  // namespace cmrt
