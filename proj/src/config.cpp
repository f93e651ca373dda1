#include "rgbx/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "rgbx/errors.hpp"

namespace rgbx {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

double to_double(std::string_view token, const std::string& key) {
  double v = 0.0;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("'" + std::string(token) + "' is not a number (key " + key + ")");
  }
  return v;
}

}  // namespace

std::vector<double> parse_number_list(std::string_view text, const std::string& key) {
  std::vector<double> out;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) out.push_back(to_double(token, key));
    token.clear();
  };
  for (char ch : text) {
    if (ch == ',' || ch == ';' || ch == ' ' || ch == '\t') {
      flush();
    } else {
      token += ch;
    }
  }
  flush();
  return out;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Config Config::parse(std::string_view text) {
  Config cfg;
  cfg.sections_.push_back({});
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty() || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      cfg.sections_.push_back({trim(std::string_view(line).substr(1, line.size() - 2)), {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    Section& section = cfg.sections_.back();
    section.entries.emplace_back(key, value);
    cfg.values_[section.name.empty() ? key : section.name + "." + key] = value;
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

int Config::get_int(const std::string& key, int fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  int out = 0;
  const auto* end = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + *v + "' is not an integer (key " + key + ")");
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  return v ? to_double(*v, key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "on" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "off" || *v == "0" || *v == "no") return false;
  throw ConfigError("unknown value '" + *v + "' for " + key + " (valid: on, off)");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  auto v = get(key);
  return v ? parse_number_list(*v, key) : std::vector<double>{};
}

std::vector<int> Config::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (double d : get_doubles(key)) {
    if (d != static_cast<int>(d)) throw ConfigError("key " + key + " expects integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
  if (sections_.empty()) sections_.push_back({});
  sections_.front().entries.emplace_back(key, value);
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.values_) set(k, v);
}

void Config::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) {
      std::string valid;
      for (const auto& name : known) valid += (valid.empty() ? "" : ", ") + name;
      throw ConfigError("unknown config key '" + k + "' (valid: " + valid + ")");
    }
  }
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace rgbx
