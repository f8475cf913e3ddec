#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace theraloop {

// Flat `key = value` configuration (e.g. `gateway.backend = stub`). Lines
// starting with '#' are comments. Unknown keys are kept so that callers can
// reject them.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::string& path);

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(std::string_view key) const { return values_.find(key) != values_.end(); }
  std::optional<std::string> get(std::string_view key) const;

  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  long long get_int(std::string_view key, long long fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace theraloop
