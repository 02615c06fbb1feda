#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ct {

// Flat key=value store with typed readers. Later assignments win, so merge
// order encodes precedence.
class ConfigMap {
public:
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_long(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;

    // Accepts plain numbers and a/b ratios such as "1/16".
    double get_fraction(const std::string& key, double fallback) const;

    std::vector<long> get_longs(const std::string& key, const std::vector<long>& fallback) const;
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;

private:
    const std::string* find(const std::string& key) const;

    std::map<std::string, std::string> values_;
};

// key = value lines; blank lines and lines starting with # are skipped.
ConfigMap parse_config_file(const std::string& path);

// "key=value" strings, as collected from command-line flags.
ConfigMap parse_key_values(const std::vector<std::string>& pairs);

// Entries of over replace entries of base.
void merge_overrides(ConfigMap& base, const ConfigMap& over);

}  // namespace ct
