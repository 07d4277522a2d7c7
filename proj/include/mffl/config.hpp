#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace mffl {

// TOML-style value: bools, integers, floats, strings, homogeneous arrays.
using ConfigValue = std::variant<bool, std::int64_t, double, std::string,
                                 std::vector<double>, std::vector<std::string>>;

// Minimal section/key-value config. One file per run; no nested tables.
class ParsedConfig {
 public:
  static ParsedConfig parse_file(const std::filesystem::path& path);
  static ParsedConfig parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  const ConfigValue* find(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, ConfigValue value);

  // Sorted, normalized text form; parsing it back yields an equal config.
  std::string canonical() const;
  // FNV-1a over the canonical form, as 16 hex digits.
  std::string hash() const;

  const std::map<std::string, std::map<std::string, ConfigValue>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, ConfigValue>> sections_;
};

// Typed access with unknown-key detection: every read marks the key as
// consumed, and finish() rejects any key that was never requested.
class ConfigReader {
 public:
  explicit ConfigReader(ParsedConfig config) : config_(std::move(config)) {}

  double number(const std::string& section, const std::string& key);
  double number(const std::string& section, const std::string& key, double fallback);
  std::int64_t integer(const std::string& section, const std::string& key);
  std::int64_t integer(const std::string& section, const std::string& key,
                       std::int64_t fallback);
  bool boolean(const std::string& section, const std::string& key, bool fallback);
  std::string str(const std::string& section, const std::string& key);
  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback);
  std::vector<double> numbers(const std::string& section, const std::string& key);
  std::vector<double> numbers(const std::string& section, const std::string& key,
                              std::vector<double> fallback);
  bool has(const std::string& section, const std::string& key) const {
    return config_.has(section, key);
  }

  // Throws naming the first present key that was never consumed.
  void finish() const;

  const ParsedConfig& config() const { return config_; }

 private:
  const ConfigValue& fetch(const std::string& section, const std::string& key);
  const ConfigValue* fetch_optional(const std::string& section, const std::string& key);

  ParsedConfig config_;
  std::set<std::string> consumed_;
};

}  // namespace mffl
