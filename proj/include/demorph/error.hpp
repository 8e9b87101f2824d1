#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace demorph {

// Every error thrown by the library carries a short category so the CLI can
// report failures in a machine-parseable form ("error[<module>/<category>]").
enum class ErrorCategory {
  structural,  // shape / size / count mismatch
  geometry,    // degenerate geometry (collinear landmarks etc.)
  config,      // invalid configuration or flag
  io,          // missing or unreadable file
  data,        // malformed manifest or dataset content
  numeric,     // non-finite values, undefined statistics
  checkpoint,  // corrupt or incompatible checkpoint
};

std::string_view to_string(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string module, const std::string& message)
      : std::runtime_error(message), category_(category), module_(std::move(module)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCategory category_;
  std::string module_;
};

}  // namespace demorph
