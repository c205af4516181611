#pragma once

// Small text helpers shared by the config parser and the CSV writers.
// Doubles are printed with std::to_chars (shortest round-trip form) so that
// identical runs produce byte-identical files.

#include <charconv>
#include <cstdlib>
#include <string>

#include "noisymarl/tensor.hpp"

namespace noisymarl {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_i64(const std::string& s, long long& out) {
  const std::string t = trim(s);
  if (t == "inf" || t == "+inf") {
    out = 0;  // sentinel: shuffle-interval "never"
    return true;
  }
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(t.c_str(), &end, 10);
  if (errno != 0 || end == t.c_str() || *end != '\0') return false;
  out = v;
  return true;
}

inline bool parse_f64(const std::string& s, double& out) {
  const std::string t = trim(s);
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0') return false;
  out = v;
  return true;
}

inline bool parse_bool(const std::string& s, bool& out) {
  const std::string t = trim(s);
  if (t == "true" || t == "1") {
    out = true;
    return true;
  }
  if (t == "false" || t == "0") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace noisymarl
