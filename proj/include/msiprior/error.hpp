#pragma once

#include <stdexcept>
#include <string>

namespace msiprior {

/// Error categories. The numeric value doubles as the CLI exit status.
enum class ErrorKind : int {
  kInvalidInput = 2,
  kConfig = 3,
  kNumeric = 4,
  kFormat = 5,
  kUndefinedMetric = 6,
  kIo = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid input";
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kUndefinedMetric: return "undefined metric";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace msiprior
