#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace doorbench {

enum class ErrorKind {
  InvalidArgument,
  Compatibility,
  Configuration,
  EpisodeExhausted,
  InvalidState,
  Reachability,
  EmptyObservation,
  NearClip,
  Shape,
  Degeneracy,
  GenerationFailure,
  Provenance,
  Data,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every recoverable failure in the library is reported through this type;
/// the CLI turns it into a JSON error object and a nonzero exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace doorbench
