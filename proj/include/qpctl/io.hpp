#pragma once

#include "qpctl/core.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace qpctl::io {

/// Decimal text with 17 significant digits; round-trips every double.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "cannot parse '" + text + "' as a number for " + what);
  }
}

inline std::vector<double> parse_doubles(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& f : split(text, ',')) out.push_back(parse_double(f, what));
  return out;
}

/// Parses "a,b,c,d" as [x1_min, x1_max] x [x2_min, x2_max].
inline Rect parse_rect(const std::string& text, const std::string& what) {
  const auto v = parse_doubles(text, what);
  if (v.size() != 4) {
    throw Error(ErrorCode::invalid_argument, what + " needs 4 comma-separated numbers");
  }
  Rect r{v[0], v[1], v[2], v[3]};
  if (r.degenerate()) throw Error(ErrorCode::invalid_argument, what + " is degenerate");
  return r;
}

inline std::string format_rect(const Rect& r) {
  return fmt(r.x1_min) + "," + fmt(r.x1_max) + "," + fmt(r.x2_min) + "," + fmt(r.x2_max);
}

/// Flat `key = value` document. Blank lines and lines starting with '#' are
/// ignored; later keys override earlier ones.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::invalid_argument,
                  "config line " + std::to_string(line_no) + " has no '='");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::invalid_argument,
                  "config line " + std::to_string(line_no) + " has an empty key");
    }
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "' for reading");
  return in;
}

inline std::string read_all(const std::string& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace qpctl::io
