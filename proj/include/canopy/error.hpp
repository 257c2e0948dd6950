#pragma once

#include <stdexcept>
#include <string>

namespace canopy {

enum class ErrorKind {
  InvalidSun,
  InvalidConfig,
  MissingColors,
  SpecMismatch,
  EmptyCloud,
  MissingTarget,
  EmptyFootprint,
  MalformedPly,
  MalformedPfm,
  MalformedPpm,
  MalformedManifest,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSun: return "InvalidSun";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::MissingColors: return "MissingColors";
    case ErrorKind::SpecMismatch: return "SpecMismatch";
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::MissingTarget: return "MissingTarget";
    case ErrorKind::EmptyFootprint: return "EmptyFootprint";
    case ErrorKind::MalformedPly: return "MalformedPly";
    case ErrorKind::MalformedPfm: return "MalformedPfm";
    case ErrorKind::MalformedPpm: return "MalformedPpm";
    case ErrorKind::MalformedManifest: return "MalformedManifest";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library; `kind()` is what callers branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace canopy
