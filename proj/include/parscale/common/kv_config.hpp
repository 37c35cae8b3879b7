#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string_view>
#include <string>
#include <vector>

namespace parscale {

// Flat `key = value` text with `#` comments. Keys are unique; later
// duplicates are rejected so typos do not silently override.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text,
                              const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated list of integers.
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

  // Keys with the given prefix, in sorted order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Keys that were never read through a getter; used to reject typos.
  std::vector<std::string> unused_keys() const;

  std::string to_string() const;

 private:
  const std::string& require(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> touched_;
  std::string origin_;
};

// Locale-independent formatting of reals (shortest round-trip form).
std::string format_real(double value);

// Whole-string, locale-independent parse; nullopt on any leftover text.
std::optional<double> parse_real(std::string_view text);

}  // namespace parscale
