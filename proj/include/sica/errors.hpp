#pragma once

#include <stdexcept>
#include <string>

namespace sica {

// Thrown when an algorithm fails numerically (SVD non-convergence,
// diverged training, undefined ratios). Distinct from std::invalid_argument,
// which covers rejected inputs, so callers can map the two to different
// exit codes.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sica
