#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "regle/csv.hpp"
#include "regle/errors.hpp"

namespace regle::config {

/// One `key = value` line; `section` is the most recent `[header]`.
struct Entry {
  std::string section;
  std::string key;
  std::string value;
  std::size_t line = 0;

  std::string qualified() const { return section.empty() ? key : section + "." + key; }
};

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

/// Parses `[section]` headers and `key = value` lines. `#` and `;` start
/// comments; blank lines are ignored.
inline std::vector<Entry> parse(std::string_view text, const std::string& source = "<config>") {
  std::vector<Entry> out;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t hash = raw.find_first_of("#;");
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    Entry e{section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError(where + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Entry> read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

// ------------------------------------------------------------------ values

template <class T>
T parse_value(const std::string& s, const std::string& key) {
  T v{};
  if (!csv::parse(trim(s), v)) throw ConfigError("cannot parse '" + s + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  std::string v = trim(s);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("cannot parse '" + s + "' as a boolean for " + key);
}

/// Comma-separated doubles; an empty string is an empty list.
inline std::vector<double> parse_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& cell : csv::split_line(s)) out.push_back(parse_value<double>(cell, key));
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += csv::format(v[i]);
  }
  return s;
}

}  // namespace regle::config
