#include "fsed/error.hpp"

namespace fsed {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::format: return "format";
    case ErrorCategory::unsupported: return "unsupported";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::task: return "task";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::config: return "config";
    case ErrorCategory::generation: return "generation";
    case ErrorCategory::selection: return "selection";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

}  // namespace fsed
