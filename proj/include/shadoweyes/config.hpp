#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "shadoweyes/common.hpp"

namespace shadoweyes {

/// Flat dotted-key configuration (`augment.p = 0.5`).
///
/// A Config is created from a table of defaults; files and flags may only set
/// keys that already have a default, so typos surface as ConfigError instead of
/// being silently ignored. The resolved table (defaults + overrides) is what gets
/// snapshotted and hashed.
class Config {
public:
    Config() = default;
    explicit Config(std::map<std::string, std::string> defaults) : values_(std::move(defaults)) {}

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, std::string value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second = std::move(value);
    }

    /// Parses `key = value` lines; '#' starts a comment.
    void merge_text(const std::string& text, const std::string& origin = "<config>") {
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            auto s = trim(line);
            if (s.empty()) continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            auto key = trim(s.substr(0, eq));
            auto value = trim(s.substr(eq + 1));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            try {
                set(key, value);
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void merge_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        merge_text(ss.str(), path);
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        return it->second;
    }

    double real(const std::string& key) const {
        const auto& s = str(key);
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
        return v;
    }

    long long integer(const std::string& key) const {
        const auto& s = str(key);
        long long v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
        return v;
    }

    bool flag(const std::string& key) const {
        const auto& s = str(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError("key '" + key + "': expected true/false, got '" + s + "'");
    }

    /// Canonical `key = value` listing, sorted by key; replaying it reproduces the run.
    std::string resolved_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    std::uint64_t hash() const { return fnv1a(resolved_text()); }

    const std::map<std::string, std::string>& values() const { return values_; }

    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace shadoweyes
