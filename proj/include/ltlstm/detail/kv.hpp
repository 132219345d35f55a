#pragma once

#include "ltlstm/cells.hpp" // ConfigError

#include <istream>
#include <map>
#include <set>
#include <string>

namespace ltlstm::detail {

inline std::string trim(const std::string &s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos)
    return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// "key = value" per line, '#' to end of line is a comment, blank lines ignored.
inline std::map<std::string, std::string> read_kv(std::istream &in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

class KvReader {
public:
  explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string &key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string &key) {
    auto it = kv_.find(key);
    if (it == kv_.end())
      throw ConfigError("config: missing key '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string &key, const std::string &fallback) {
    return has(key) ? get_string(key) : fallback;
  }

  long long get_int(const std::string &key) {
    const std::string s = get_string(key);
    try {
      std::size_t pos = 0;
      long long v = std::stoll(s, &pos);
      if (pos != s.size())
        throw std::invalid_argument(s);
      return v;
    } catch (const std::exception &) {
      throw ConfigError("config: key '" + key + "' is not an integer: '" + s + "'");
    }
  }

  long long get_int(const std::string &key, long long fallback) {
    return has(key) ? get_int(key) : fallback;
  }

  double get_double(const std::string &key) {
    const std::string s = get_string(key);
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size())
        throw std::invalid_argument(s);
      return v;
    } catch (const std::exception &) {
      throw ConfigError("config: key '" + key + "' is not a number: '" + s + "'");
    }
  }

  double get_double(const std::string &key, double fallback) {
    return has(key) ? get_double(key) : fallback;
  }

  bool get_bool(const std::string &key, bool fallback) {
    if (!has(key))
      return fallback;
    const std::string s = get_string(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on")
      return true;
    if (s == "false" || s == "0" || s == "no" || s == "off")
      return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: '" + s + "'");
  }

  // Call after reading everything; flags typos.
  void reject_unused() const {
    for (const auto &[key, value] : kv_)
      if (!used_.count(key))
        throw ConfigError("config: unknown key '" + key + "'");
  }

private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

} // namespace ltlstm::detail
