#include "config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>

#include "errors.hpp"

namespace ct {

namespace {

std::string trim(const std::string& s) {
    size_t lo = 0;
    size_t hi = s.size();
    while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo])) != 0) ++lo;
    while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1])) != 0) --hi;
    return s.substr(lo, hi - lo);
}

long parse_long(const std::string& key, const std::string& text) {
    long out = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("key '" + key + "': cannot parse '" + text + "' as an integer");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& text) {
    if (text.empty()) throw ConfigError("key '" + key + "': empty number");
    char* end = nullptr;
    const double out = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) {
        throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number");
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (start <= text.size()) {
        const size_t comma = text.find(',', start);
        const size_t end = comma == std::string::npos ? text.size() : comma;
        const std::string piece = trim(text.substr(start, end - start));
        if (!piece.empty()) parts.push_back(piece);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return parts;
}

}  // namespace

void ConfigMap::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("empty config key");
    values_[key] = value;
}

bool ConfigMap::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string* ConfigMap::find(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v == nullptr ? fallback : *v;
}

long ConfigMap::get_long(const std::string& key, long fallback) const {
    const std::string* v = find(key);
    return v == nullptr ? fallback : parse_long(key, *v);
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v == nullptr ? fallback : parse_double(key, *v);
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError("key '" + key + "': cannot parse '" + *v + "' as a boolean");
}

std::uint64_t ConfigMap::get_seed(const std::string& key, std::uint64_t fallback) const {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) {
        throw ConfigError("key '" + key + "': cannot parse '" + *v + "' as a seed");
    }
    return out;
}

double ConfigMap::get_fraction(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    const size_t slash = v->find('/');
    if (slash == std::string::npos) return parse_double(key, *v);
    const double num = parse_double(key, trim(v->substr(0, slash)));
    const double den = parse_double(key, trim(v->substr(slash + 1)));
    if (den == 0.0) throw ConfigError("key '" + key + "': zero denominator");
    return num / den;
}

std::vector<long> ConfigMap::get_longs(const std::string& key,
                                       const std::vector<long>& fallback) const {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    std::vector<long> out;
    for (const std::string& piece : split_list(*v)) out.push_back(parse_long(key, piece));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

std::vector<double> ConfigMap::get_doubles(const std::string& key,
                                           const std::vector<double>& fallback) const {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    std::vector<double> out;
    for (const std::string& piece : split_list(*v)) out.push_back(parse_double(key, piece));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    ConfigMap map;
    std::string line;
    long number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(number) + ": expected key = value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(number) + ": empty key");
        }
        map.set(key, trim(stripped.substr(eq + 1)));
    }
    return map;
}

ConfigMap parse_key_values(const std::vector<std::string>& pairs) {
    ConfigMap map;
    for (const std::string& pair : pairs) {
        const size_t eq = pair.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("expected key=value, got '" + pair + "'");
        }
        map.set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
    }
    return map;
}

void merge_overrides(ConfigMap& base, const ConfigMap& over) {
    for (const auto& [key, value] : over.entries()) base.set(key, value);
}

}  // namespace ct
