#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmrt/csv.hpp"
#include "cmrt/error.hpp"

namespace cmrt {

/// Flat `key = value` file. '#' starts a comment, `[section]` prefixes
/// following keys with "section.", string values may be double-quoted.
/// Reading a key marks it consumed so callers can reject unknown keys.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(std::istream& is, const std::string& where = "config") {
    ConfigFile cf;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw Error(ErrorKind::config, where + ":" + std::to_string(lineno) + ": bad section");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorKind::config, where + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty()) throw Error(ErrorKind::config, where + ":" + std::to_string(lineno) + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (!section.empty()) key = section + "." + key;
      if (cf.values_.count(key)) throw Error(ErrorKind::config, where + ": duplicate key '" + key + "'");
      cf.values_[key] = value;
    }
    return cf;
  }

  static ConfigFile load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::io, "cannot open config '" + path.string() + "'");
    return parse(is, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double real(const std::string& key, double fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    return csv::to_double(str(key, ""), "config key '" + key + "'");
  }
  long long integer(const std::string& key, long long fallback) const {
    const double v = real(key, static_cast<double>(fallback));
    if (v != static_cast<double>(static_cast<long long>(v))) {
      throw Error(ErrorKind::config, "config key '" + key + "' must be an integer");
    }
    return static_cast<long long>(v);
  }
  bool boolean(const std::string& key, bool fallback) const {
    const auto s = str(key, fallback ? "true" : "false");
    if (s == "true") return true;
    if (s == "false") return false;
    throw Error(ErrorKind::config, "config key '" + key + "' must be true or false");
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    for (auto& s : csv::split_line(str(key, ""))) {
      s = trim(s);
      if (!s.empty()) out.push_back(s);
    }
    return out;
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& kv : values_) {
      if (!used_.count(kv.first)) out.push_back(kv.first);
    }
    return out;
  }
  void reject_unused(const std::string& where) const {
    const auto u = unused_keys();
    if (!u.empty()) throw Error(ErrorKind::config, where + ": unknown key '" + u.front() + "'");
  }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace cmrt
