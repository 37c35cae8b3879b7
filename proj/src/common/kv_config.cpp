#include "parscale/common/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "parscale/common/errors.hpp"

namespace parscale {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text,
                                     const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError(origin + ":" + std::to_string(line_no) +
                       ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (cfg.values_.count(key) != 0) {
      throw InputError(origin + ":" + std::to_string(line_no) +
                       ": duplicate key '" + key + "'");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

const std::string& KeyValueConfig::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw InputError(origin_ + ": missing key '" + key + "'");
  }
  touched_[key] = true;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  return require(key);
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  return has(key) ? require(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string& raw = require(key);
  const auto value = parse_real(raw);
  if (!value) throw InputError(origin_ + ": key '" + key + "' is not a number: " + raw);
  return *value;
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  const std::string& raw = require(key);
  std::int64_t value = 0;
  const auto* end = raw.data() + raw.size();
  auto [ptr, ec] = std::from_chars(raw.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw InputError(origin_ + ": key '" + key + "' is not an integer: " + raw);
  }
  return value;
}

std::int64_t KeyValueConfig::get_int(const std::string& key,
                                     std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& raw = require(key);
  if (raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  throw InputError(origin_ + ": key '" + key + "' is not a boolean: " + raw);
}

std::vector<std::int64_t> KeyValueConfig::get_int_list(
    const std::string& key) const {
  std::vector<std::int64_t> out;
  std::stringstream ss(require(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::int64_t v = 0;
    const auto* end = item.data() + item.size();
    auto [ptr, ec] = std::from_chars(item.data(), end, v);
    if (ec != std::errc() || ptr != end) {
      throw InputError(origin_ + ": key '" + key + "' has a bad list item: " +
                       item);
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::keys_with_prefix(
    const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_) {
    if (k.rfind(prefix, 0) == 0) out.push_back(k);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_) {
    if (!touched_.count(k)) out.push_back(k);
  }
  return out;
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string format_real(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::optional<double> parse_real(std::string_view text) {
  double value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

}  // namespace parscale
