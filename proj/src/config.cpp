#include "mffl/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mffl/csv.hpp"

namespace mffl {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Strip a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool looks_integer(const std::string& s) {
  std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i >= s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

ConfigValue parse_scalar(const std::string& raw, int line_no) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
    return raw.substr(1, raw.size() - 2);
  if (looks_integer(raw)) {
    std::int64_t v = 0;
    const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (res.ec == std::errc() && res.ptr == raw.data() + raw.size()) return v;
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(raw, &pos);
    if (pos == raw.size()) return v;
  } catch (const std::exception&) {
  }
  fail("config line " + std::to_string(line_no) + ": cannot parse value '" + raw + "'");
}

ConfigValue parse_value(const std::string& raw, int line_no) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']')
      fail("config line " + std::to_string(line_no) + ": unterminated array");
    const std::string inner = trim(raw.substr(1, raw.size() - 2));
    std::vector<std::string> items;
    std::string current;
    bool quoted = false;
    for (char c : inner) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        items.push_back(trim(current));
        current.clear();
      } else {
        current += c;
      }
    }
    if (!trim(current).empty()) items.push_back(trim(current));
    std::vector<double> nums;
    std::vector<std::string> strs;
    bool all_nums = true;
    for (const auto& item : items) {
      const ConfigValue v = parse_scalar(item, line_no);
      if (std::holds_alternative<double>(v)) {
        nums.push_back(std::get<double>(v));
      } else if (std::holds_alternative<std::int64_t>(v)) {
        nums.push_back(static_cast<double>(std::get<std::int64_t>(v)));
      } else if (std::holds_alternative<std::string>(v)) {
        all_nums = false;
        strs.push_back(std::get<std::string>(v));
      } else {
        fail("config line " + std::to_string(line_no) + ": unsupported array element");
      }
    }
    if (all_nums) return nums;
    if (strs.size() == items.size()) return strs;
    fail("config line " + std::to_string(line_no) + ": mixed array types");
  }
  return parse_scalar(raw, line_no);
}

std::string value_to_text(const ConfigValue& v) {
  struct Printer {
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const { return g17(d); }
    std::string operator()(const std::string& s) const { return '"' + s + '"'; }
    std::string operator()(const std::vector<double>& xs) const {
      std::string out = "[";
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        out += g17(xs[i]);
      }
      return out + "]";
    }
    std::string operator()(const std::vector<std::string>& xs) const {
      std::string out = "[";
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        out += '"' + xs[i] + '"';
      }
      return out + "]";
    }
  };
  return std::visit(Printer{}, v);
}

}  // namespace

ParsedConfig ParsedConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) fail("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

ParsedConfig ParsedConfig::parse_string(const std::string& text) {
  ParsedConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(strip_comment(line));
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']')
        fail("config line " + std::to_string(line_no) + ": malformed section header");
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (section.empty())
        fail("config line " + std::to_string(line_no) + ": empty section name");
      cfg.sections_[section];
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string raw = trim(stripped.substr(eq + 1));
    if (key.empty())
      fail("config line " + std::to_string(line_no) + ": empty key");
    if (section.empty())
      fail("config line " + std::to_string(line_no) + ": key outside any section");
    if (cfg.sections_[section].count(key))
      fail("config line " + std::to_string(line_no) + ": duplicate key '" + section +
           "." + key + "'");
    cfg.sections_[section][key] = parse_value(raw, line_no);
  }
  return cfg;
}

bool ParsedConfig::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

const ConfigValue* ParsedConfig::find(const std::string& section,
                                      const std::string& key) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  const auto kit = sit->second.find(key);
  return kit == sit->second.end() ? nullptr : &kit->second;
}

void ParsedConfig::set(const std::string& section, const std::string& key,
                       ConfigValue value) {
  sections_[section][key] = std::move(value);
}

std::string ParsedConfig::canonical() const {
  std::string out;
  for (const auto& [section, keys] : sections_) {
    out += "[" + section + "]\n";
    for (const auto& [key, value] : keys)
      out += key + " = " + value_to_text(value) + "\n";
  }
  return out;
}

std::string ParsedConfig::hash() const {
  const std::string text = canonical();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const ConfigValue& ConfigReader::fetch(const std::string& section,
                                       const std::string& key) {
  const ConfigValue* v = fetch_optional(section, key);
  if (!v) fail("config is missing required key '" + section + "." + key + "'");
  return *v;
}

const ConfigValue* ConfigReader::fetch_optional(const std::string& section,
                                                const std::string& key) {
  consumed_.insert(section + "." + key);
  return config_.find(section, key);
}

double ConfigReader::number(const std::string& section, const std::string& key) {
  const ConfigValue& v = fetch(section, key);
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  if (std::holds_alternative<std::int64_t>(v))
    return static_cast<double>(std::get<std::int64_t>(v));
  fail("config key '" + section + "." + key + "' must be a number");
}

double ConfigReader::number(const std::string& section, const std::string& key,
                            double fallback) {
  return fetch_optional(section, key) ? number(section, key) : fallback;
}

std::int64_t ConfigReader::integer(const std::string& section, const std::string& key) {
  const ConfigValue& v = fetch(section, key);
  if (std::holds_alternative<std::int64_t>(v)) return std::get<std::int64_t>(v);
  fail("config key '" + section + "." + key + "' must be an integer");
}

std::int64_t ConfigReader::integer(const std::string& section, const std::string& key,
                                   std::int64_t fallback) {
  return fetch_optional(section, key) ? integer(section, key) : fallback;
}

bool ConfigReader::boolean(const std::string& section, const std::string& key,
                           bool fallback) {
  if (!fetch_optional(section, key)) return fallback;
  const ConfigValue& v = fetch(section, key);
  if (std::holds_alternative<bool>(v)) return std::get<bool>(v);
  fail("config key '" + section + "." + key + "' must be a boolean");
}

std::string ConfigReader::str(const std::string& section, const std::string& key) {
  const ConfigValue& v = fetch(section, key);
  if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
  fail("config key '" + section + "." + key + "' must be a string");
}

std::string ConfigReader::str(const std::string& section, const std::string& key,
                              const std::string& fallback) {
  return fetch_optional(section, key) ? str(section, key) : fallback;
}

std::vector<double> ConfigReader::numbers(const std::string& section,
                                          const std::string& key) {
  const ConfigValue& v = fetch(section, key);
  if (std::holds_alternative<std::vector<double>>(v))
    return std::get<std::vector<double>>(v);
  if (std::holds_alternative<double>(v)) return {std::get<double>(v)};
  if (std::holds_alternative<std::int64_t>(v))
    return {static_cast<double>(std::get<std::int64_t>(v))};
  fail("config key '" + section + "." + key + "' must be a numeric array");
}

std::vector<double> ConfigReader::numbers(const std::string& section,
                                          const std::string& key,
                                          std::vector<double> fallback) {
  return fetch_optional(section, key) ? numbers(section, key) : fallback;
}

void ConfigReader::finish() const {
  for (const auto& [section, keys] : config_.sections())
    for (const auto& [key, value] : keys) {
      const std::string full = section + "." + key;
      if (!consumed_.count(full)) fail("unknown config key '" + full + "'");
    }
}

}  // namespace mffl
