#include "doorbench/error.hpp"

namespace doorbench {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Compatibility: return "compatibility";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::EpisodeExhausted: return "episode_exhausted";
    case ErrorKind::InvalidState: return "invalid_state";
    case ErrorKind::Reachability: return "reachability";
    case ErrorKind::EmptyObservation: return "empty_observation";
    case ErrorKind::NearClip: return "near_clip";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Degeneracy: return "degeneracy";
    case ErrorKind::GenerationFailure: return "generation_failure";
    case ErrorKind::Provenance: return "provenance";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace doorbench
