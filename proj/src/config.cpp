#include "apdraw/config.hpp"

#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "apdraw/common.hpp"

namespace apdraw {
namespace {

std::string strip_quotes(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
    return v.substr(1, v.size() - 2);
  return v;
}

Config from_stream(std::istream& in, const std::string& origin) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  Config cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      cfg.set(section, strip_quotes(body.data()));
      continue;
    }
    for (const auto& [key, value] : body) cfg.set(section + "." + key, strip_quotes(value.data()));
  }
  return cfg;
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return from_stream(in, path.string());
}

Config Config::from_string(const std::string& text) {
  std::istringstream in(text);
  return from_stream(in, "<string>");
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

void Config::set(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override must look like section.key=value: " + assignment);
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool Config::contains(const std::string& key) const { return entries_.count(key) != 0; }

std::optional<std::string> Config::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    long long out = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an integer, got '" + *v + "'");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    double out = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects a number, got '" + *v + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("config key " + key + " expects true|false, got '" + *v + "'");
}

}  // namespace apdraw
