#pragma once

#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajectron/core.hpp"
#include "trajectron/dataio.hpp"

namespace trajectron {

// Ordered key=value document; '#' starts a comment line.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text) {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto line = detail::trim(raw);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
      std::string key(detail::trim(line.substr(0, eq)));
      if (key.empty()) throw ParseError(line_no, "empty key");
      if (kv.values_.count(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
      kv.values_[key] = std::string(detail::trim(line.substr(eq + 1)));
    }
    return kv;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline int parse_int_value(const std::string& key, const std::string& v) {
  int out = 0;
  if (!detail::parse_integral(v, out)) throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_double_value(const std::string& key, const std::string& v) {
  double out = 0.0;
  if (!detail::parse_double(v, out)) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    auto t = detail::trim(cur);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_double_value(key, s));
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + format_double(v[k]);
  return out;
}

}  // namespace trajectron
