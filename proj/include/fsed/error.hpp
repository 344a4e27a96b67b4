#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fsed {

enum class ErrorCategory {
  format,
  unsupported,
  validation,
  task,
  shape,
  numeric,
  config,
  generation,
  selection,
  io,
};

std::string_view to_string(ErrorCategory category);

/// Every failure raised by the library carries a category so the CLI can
/// report it and tests can assert on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void raise(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

}  // namespace fsed
