#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rgbx {

// Flat key=value text with optional [section] headers. A key inside
// [section] is addressed as "section.key"; keys before any header keep their
// literal (possibly dotted) name. '#' starts a comment anywhere, ';' only at
// the start of a line.
class Config {
 public:
  struct Section {
    std::string name;  // empty for the leading unnamed block
    std::vector<std::pair<std::string, std::string>> entries;
  };

  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  // Applies every entry of `other` on top of this config.
  void merge(const Config& other);

  // Throws ConfigError naming the first key that is not in `known`.
  void require_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::vector<Section>& sections() const { return sections_; }

  // Canonical "key = value" lines in sorted key order.
  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<Section> sections_;
};

// Splits on commas, semicolons or whitespace and parses each token.
std::vector<double> parse_number_list(std::string_view text, const std::string& key);

// 64-bit FNV-1a; stable across platforms.
std::uint64_t fnv1a(std::string_view text);

}  // namespace rgbx
