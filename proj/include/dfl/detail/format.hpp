#pragma once

#include <cstdio>
#include <string>

namespace dfl::detail {

// 17 significant digits: enough to round-trip any double.
inline std::string fmt17(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace dfl::detail
