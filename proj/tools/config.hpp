#pragma once

// Plain-text experiment configuration.
//
//   # comment
//   experiment = csl-born
//   [seeds]
//   master = 42
//   trajectories = 10000
//   [params]
//   weights = 0.3, 0.7
//   [params.grid]
//   n = 256
//
// Section headers may be dotted to nest; keys are stored flattened as
// "section.sub.key". Values run to the end of the line, trimmed.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "drm/errors.hpp"

namespace drm::cli {

class ConfigError : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class Config {
public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const std::string where = "line " + std::to_string(lineno) + ": ";
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(where + "unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty() || section.find_first_of(" \t=") != std::string::npos)
          throw ConfigError(where + "bad section name '" + section + "'");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty() || key.find_first_of(" \t") != std::string::npos) throw ConfigError(where + "bad key '" + key + "'");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full)) throw ConfigError(where + "duplicate key '" + full + "'");
      c.values_[full] = trim(t.substr(eq + 1));
    }
    return c;
  }

  bool has(const std::string& k) const { return values_.count(k) > 0; }
  std::optional<std::string> get(const std::string& k) const {
    const auto it = values_.find(k);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }
  void set(const std::string& k, const std::string& v) { values_[k] = v; }
  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text (sorted key = value lines) used for hashing.
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
  }

private:
  std::map<std::string, std::string> values_;
};

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not a number: '" + v + "'");
  }
  if (trim(v.substr(pos)) != "") throw ConfigError("key '" + key + "': trailing characters in '" + v + "'");
  return d;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

// "1,0,3; 0,2,3" -> {{1,0,3},{0,2,3}}
inline std::vector<std::vector<double>> parse_table(const std::string& key, const std::string& v) {
  std::vector<std::vector<double>> out;
  std::stringstream ss(v);
  std::string row;
  while (std::getline(ss, row, ';')) out.push_back(parse_list(key, trim(row)));
  return out;
}

struct ParamSpec {
  std::string key;                      // relative to "params."
  std::optional<std::string> fallback;  // absent: required
};

// The params.* view of a config checked against a schema.
class Params {
public:
  Params(const Config& c, const std::vector<ParamSpec>& schema) {
    std::set<std::string> known;
    for (const auto& s : schema) {
      known.insert(s.key);
      if (const auto v = c.get("params." + s.key)) values_[s.key] = *v;
      else if (s.fallback) values_[s.key] = *s.fallback;
      else missing_.push_back(s.key);
    }
    for (const auto& [k, v] : c.values())
      if (k.rfind("params.", 0) == 0 && !known.count(k.substr(7))) unknown_.push_back(k);
  }

  void check() const {
    if (!unknown_.empty()) throw ConfigError("unknown key '" + unknown_.front() + "'");
    if (!missing_.empty()) throw ConfigError("missing required key 'params." + missing_.front() + "'");
  }
  const std::vector<std::string>& unknown() const { return unknown_; }
  const std::vector<std::string>& missing() const { return missing_; }

  std::string str(const std::string& k) const { return values_.at(k); }
  double num(const std::string& k) const { return parse_double("params." + k, values_.at(k)); }
  long integer(const std::string& k) const {
    const double d = num(k);
    if (d != std::floor(d)) throw ConfigError("key 'params." + k + "': expected an integer");
    return long(d);
  }
  std::vector<double> list(const std::string& k) const { return parse_list("params." + k, values_.at(k)); }
  std::vector<std::vector<double>> table(const std::string& k) const { return parse_table("params." + k, values_.at(k)); }

private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> unknown_, missing_;
};

}  // namespace drm::cli
