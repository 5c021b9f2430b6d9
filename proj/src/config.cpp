#include "crossglmm/config.hpp"

#include <fstream>
#include <sstream>

#include "strings.hpp"

namespace crossglmm {

Config Config::parse(const std::string& text, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = detail::trim(line.substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

std::optional<std::string> Config::find(const std::string& key) const {
  used_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

namespace {

template <typename F>
auto convert(const std::string& key, const std::string& value, F&& f) {
  try {
    return f(value);
  } catch (const std::exception& e) {
    throw ConfigError("bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

long long Config::get_int(const std::string& key, long long fallback) const {
  const auto v = find(key);
  return v ? convert(key, *v, [](const std::string& s) { return detail::parse_int64(s); }) : fallback;
}

std::uint64_t Config::get_uint64(const std::string& key, std::uint64_t fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  return convert(key, *v, [](const std::string& s) {
    const auto t = detail::trim(s);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
      throw std::invalid_argument("not an unsigned integer: '" + s + "'");
    }
    return out;
  });
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = find(key);
  return v ? convert(key, *v, [](const std::string& s) { return detail::parse_double(s); }) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("bad value for '" + key + "': expected true or false");
}

std::vector<std::string> Config::get_list(const std::string& key,
                                          const std::vector<std::string>& fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  auto parts = detail::split(*v, '|');
  if (parts.size() == 1 && parts[0].empty()) return {};
  return parts;
}

void Config::require_all_used() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in " + source_);
  }
}

}  // namespace crossglmm
