#include "grokalign/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "grokalign/linalg.hpp"

namespace grokalign {

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw Error("bad-config: key '" + key + "' is not numeric: " + it->second);
    }
}

long Config::get_long(const std::string& key, long fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        return std::stol(it->second);
    } catch (...) {
        throw Error("bad-config: key '" + key + "' is not an integer: " + it->second);
    }
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    return std::stoull(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("bad-config: key '" + key + "' is not boolean: " + v);
}

void Config::set_double(const std::string& key, double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    values[key] = buf;
}

void Config::set_long(const std::string& key, long value) { values[key] = std::to_string(value); }

void Config::apply_override(const std::string& assignment) {
    const auto pos = assignment.find('=');
    if (pos == std::string::npos || pos == 0)
        throw Error("bad-override: expected key=value, got '" + assignment + "'");
    values[assignment.substr(0, pos)] = assignment.substr(pos + 1);
}

std::string Config::to_json() const {
    nlohmann::json j(values);
    return j.dump(2);
}

Config Config::from_json(const std::string& text) {
    Config cfg;
    nlohmann::json j = nlohmann::json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.value().is_string())
            cfg.values[it.key()] = it.value().get<std::string>();
        else
            cfg.values[it.key()] = it.value().dump();
    }
    return cfg;
}

Config Config::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("io-error: cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

void Config::save_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("io-error: cannot write config " + path);
    os << to_json() << "\n";
}

}  // namespace grokalign
