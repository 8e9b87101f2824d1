#include "demorph/error.hpp"

namespace demorph {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::structural: return "structural";
    case ErrorCategory::geometry: return "geometry";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::checkpoint: return "checkpoint";
  }
  return "unknown";
}

}  // namespace demorph
