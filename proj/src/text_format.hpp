#pragma once

#include <cstdio>
#include <string>

namespace limcal::text {

// Fixed-point rendering used by every report file, so output bytes depend
// only on the values.
inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v == 0.0 ? 0.0 : v);
  return buf;
}

}  // namespace limcal::text
