#pragma once

#include <cstdio>
#include <string>

namespace sica {
namespace fmt {

// Shortest decimal that round-trips a double through strtod.
inline std::string full(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace fmt
}  // namespace sica
