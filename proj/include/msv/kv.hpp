#pragma once

// key=value text format used by run configs and model headers.

#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msv/error.hpp"

namespace msv {

using KeyValues = std::map<std::string, std::string>;

inline std::string Trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Blank lines and lines starting with '#' are ignored.
inline KeyValues ParseKeyValues(const std::string &text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0)
      Fail(ErrorKind::kMalformedInput, "line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = Trim(t.substr(0, eq));
    if (kv.count(key)) Fail(ErrorKind::kMalformedInput, "duplicate key '" + key + "'");
    kv[key] = Trim(t.substr(eq + 1));
  }
  return kv;
}

inline std::string FormatKeyValues(const KeyValues &kv) {
  std::string out;
  for (const auto &[k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

/// Shortest decimal that round-trips a double.
inline std::string FormatDouble(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline double ParseDouble(const std::string &key, const std::string &s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception &) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) Fail(ErrorKind::kMalformedInput, key + ": not a number: '" + s + "'");
  return v;
}

inline long ParseInt(const std::string &key, const std::string &s) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception &) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) Fail(ErrorKind::kMalformedInput, key + ": not an integer: '" + s + "'");
  return v;
}

inline std::vector<long> ParseIntList(const std::string &key, const std::string &s) {
  std::vector<long> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(ParseInt(key, Trim(item)));
  return out;
}

}  // namespace msv
