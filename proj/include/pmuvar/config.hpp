#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pmuvar/errors.hpp"
#include "pmuvar/timestamp.hpp"

namespace pmuvar {

inline constexpr std::string_view kEnvPrefix = "PMUVAR_";

// "key = value" lines; '#' starts a comment; keys may repeat (e.g. `event`).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in) {
    KeyValueConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::string_view view = trim(line);
      if (view.empty()) continue;
      auto eq = view.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      std::string key(trim(view.substr(0, eq)));
      std::string value(trim(view.substr(eq + 1)));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      cfg.entries_.emplace_back(std::move(key), std::move(value));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in);
  }

  // Environment variable for a key: PMUVAR_ + upper-cased key.
  static std::string env_name(std::string_view key) {
    std::string out(kEnvPrefix);
    for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }

  // Single-valued keys listed here are replaced by PMUVAR_<KEY> when set.
  void apply_env_overrides(const std::vector<std::string>& keys) {
    for (const auto& key : keys) {
      if (const char* v = std::getenv(env_name(key).c_str())) set(key, v);
    }
  }

  void set(const std::string& key, const std::string& value) {
    std::erase_if(entries_, [&](const auto& kv) { return kv.first == key; });
    entries_.emplace_back(key, value);
  }

  std::optional<std::string> get(std::string_view key) const {
    std::optional<std::string> out;
    for (const auto& [k, v] : entries_) {
      if (k == key) out = v;
    }
    return out;
  }

  std::vector<std::string> get_all(std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
      if (k == key) out.push_back(v);
    }
    return out;
  }

  double get_double(std::string_view key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto d = parse_double(*v);
    if (!d) throw ConfigError("key '" + std::string(key) + "': not a number: '" + *v + "'");
    return *d;
  }

  long long get_int(std::string_view key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      long long x = std::stoll(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key '" + std::string(key) + "': not an integer: '" + *v + "'");
    }
  }

  std::string get_string(std::string_view key, std::string fallback) const { return get(key).value_or(fallback); }

  bool get_bool(std::string_view key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("key '" + std::string(key) + "': not a boolean: '" + *v + "'");
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::vector<double> parse_double_list(std::string_view s, char sep = ',') {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(sep, start);
    auto item = KeyValueConfig::trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!item.empty()) {
      auto v = parse_double(item);
      if (!v) throw ConfigError("not a number: '" + std::string(item) + "'");
      out.push_back(*v);
    }
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace pmuvar
