#pragma once

// Plain-text `key = value` configuration files.
//
//   # comment
//   family = zinb
//   zero_covariates = intercept, group, time
//   truth.gamma = -2.8, 0.58, 0.1
//
// Keys are case-sensitive; list values are comma separated.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mzip/error.hpp"

namespace mzip {

namespace detail {

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "io", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      ++line_no;
      auto line = text.substr(start, end - start);
      if (const auto hash = line.find('#'); hash != std::string_view::npos) {
        line = line.substr(0, hash);
      }
      line = detail::trim(line);
      if (!line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
          throw Error(Errc::config_error, "config",
                      "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key(detail::trim(line.substr(0, eq)));
        if (key.empty()) {
          throw Error(Errc::config_error, "config",
                      "line " + std::to_string(line_no) + ": empty key");
        }
        cfg.values_[key] = std::string(detail::trim(line.substr(eq + 1)));
      }
      start = end + 1;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    return parse(detail::read_file(path));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
      throw Error(Errc::config_error, "config", "missing key '" + key + "'");
    }
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const auto v = detail::parse_double(get_string(key));
    if (!v) throw Error(Errc::config_error, "config", "key '" + key + "' is not a number");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  std::int64_t get_int(const std::string& key) const {
    const auto s = get_string(key);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error(Errc::config_error, "config", "key '" + key + "' is not an integer");
    }
    return v;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto s = get_string(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error(Errc::config_error, "config", "key '" + key + "' is not a boolean");
  }

  /// Comma-separated list; an absent key or empty value yields an empty list.
  std::vector<std::string> get_list(const std::string& key) const {
    if (!has(key)) return {};
    const auto s = get_string(key);
    if (detail::trim(s).empty()) return {};
    return detail::split(s, ',');
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : get_list(key)) {
      const auto v = detail::parse_double(item);
      if (!v) throw Error(Errc::config_error, "config", "key '" + key + "' has non-numeric entry '" + item + "'");
      out.push_back(*v);
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mzip
