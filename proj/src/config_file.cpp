#include "limcal/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "limcal/errors.hpp"

namespace limcal {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, std::string_view source) {
  KeyValues kv;
  kv.source_ = std::string(source);
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = kv.source_ + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (!kv.entries_.emplace(key, value).second) {
      throw ParseError(where + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool KeyValues::contains(std::string_view key) const { return entries_.find(key) != entries_.end(); }

void KeyValues::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

void KeyValues::reject_unknown(const std::set<std::string, std::less<>>& allowed) const {
  for (const auto& [key, value] : entries_) {
    if (!allowed.contains(key)) throw ConfigError(source_ + ": unknown key '" + key + "'");
  }
}

bool KeyValues::read(std::string_view key, std::size_t& out) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return false;
  const std::string& v = it->second;
  std::size_t parsed = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(source_ + ": key '" + std::string(key) + "' needs a non-negative integer, got '" +
                      v + "'");
  }
  out = parsed;
  return true;
}

bool KeyValues::read(std::string_view key, double& out) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return false;
  const std::string& v = it->second;
  double parsed = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(source_ + ": key '" + std::string(key) + "' needs a number, got '" + v + "'");
  }
  out = parsed;
  return true;
}

bool KeyValues::read(std::string_view key, bool& out) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return false;
  const std::string& v = it->second;
  if (v == "true" || v == "1") {
    out = true;
  } else if (v == "false" || v == "0") {
    out = false;
  } else {
    throw ConfigError(source_ + ": key '" + std::string(key) + "' needs true/false, got '" + v + "'");
  }
  return true;
}

bool KeyValues::read(std::string_view key, std::string& out) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return false;
  out = it->second;
  return true;
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [key, value] : entries_) out += key + "=" + value + "\n";
  return out;
}

}  // namespace limcal
