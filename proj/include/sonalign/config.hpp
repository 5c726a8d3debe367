#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonalign/common.hpp"
#include "sonalign/sha256.hpp"

namespace sonalign {

// Plain-text nested key-value configuration: `dotted.key = value` lines,
// '#' comments. Command-line flags override file keys; the fully resolved
// set is hashed into the run manifest so runs are auditable.

class ResolvedConfig {
public:
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required config key: " + key);
        return it->second;
    }

    int64_t get_int(const std::string& key, int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t pos = 0;
            int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + " is not an integer: '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + " is not a number: '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw ConfigError("config key " + key + " is not a boolean: '" + it->second + "'");
    }

    uint64_t get_seed(const std::string& key, uint64_t fallback) const {
        auto v = get_int(key, static_cast<int64_t>(fallback));
        return static_cast<uint64_t>(v);
    }

    // canonical text: sorted keys, one per line
    std::string canonical_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    std::string digest() const { return sha256_hex(canonical_text()); }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

inline ResolvedConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
    ResolvedConfig cfg;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.set(key, value);
    }
    return cfg;
}

inline ResolvedConfig load_config_file(const std::string& path) {
    return parse_config_text(read_file_text(path), path);
}

// ---- run manifest ----

inline std::string iso8601_now() {
    auto now = std::chrono::system_clock::now();
    auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// One manifest per command run. Chains to input artifacts by digest. The
// manifest itself carries wall-clock timestamps and is therefore the one
// output excluded from bitwise reproducibility comparisons; every data
// artifact a command writes is timestamp-free.
struct RunManifest {
    std::string command;
    std::string config_digest;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::map<std::string, std::string> input_digests;  // path → sha256
    std::vector<std::string> artifacts;
    std::map<std::string, std::string> resolved_config;
    std::string tool_version = kVersion;

    void add_input(const std::string& path) { input_digests[path] = sha256_hex(read_file_bytes(path)); }

    nlohmann::json to_json() const {
        return nlohmann::json{{"command", command},
                              {"config_digest", config_digest},
                              {"seed", seed},
                              {"started_at", started_at},
                              {"finished_at", finished_at},
                              {"inputs", input_digests},
                              {"artifacts", artifacts},
                              {"config", resolved_config},
                              {"tool_version", tool_version}};
    }

    void write(const std::string& path) const { write_file_text(path, to_json().dump(2) + "\n"); }
};

}  // namespace sonalign
