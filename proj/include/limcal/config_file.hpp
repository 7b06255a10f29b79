#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace limcal {

// Flat `key = value` text: one pair per line, `#` starts a comment, blank
// lines are ignored. Duplicate keys and lines without `=` throw ParseError.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, std::string_view source = "config");
  static KeyValues load(const std::filesystem::path& path);

  bool contains(std::string_view key) const;
  void set(std::string key, std::string value);
  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }

  // Throws ConfigError naming the first key outside `allowed`.
  void reject_unknown(const std::set<std::string, std::less<>>& allowed) const;

  // Typed reads; a missing key leaves `out` untouched and returns false.
  // Malformed values throw ConfigError naming the key.
  bool read(std::string_view key, std::size_t& out) const;
  bool read(std::string_view key, double& out) const;
  bool read(std::string_view key, bool& out) const;
  bool read(std::string_view key, std::string& out) const;

  // `key=value` lines in key order.
  std::string serialize() const;

 private:
  std::string source_ = "config";
  std::map<std::string, std::string, std::less<>> entries_;
};

}  // namespace limcal
