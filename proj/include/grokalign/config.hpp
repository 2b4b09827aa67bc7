#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace grokalign {

// Flat dot-path key/value configuration. Everything is stored as strings so
// CLI overrides, JSON round-trips and config echoes stay trivial.
struct Config {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback = "") const;
    double get_double(const std::string& key, double fallback) const;
    long get_long(const std::string& key, long fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value) { values[key] = value; }
    void set_double(const std::string& key, double value);
    void set_long(const std::string& key, long value);

    // "key=value" override, dot-path keys
    void apply_override(const std::string& assignment);

    std::string to_json() const;
    static Config from_json(const std::string& text);
    static Config from_json_file(const std::string& path);
    void save_json(const std::string& path) const;
};

}  // namespace grokalign
