#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sat {

/// Flat key=value configuration with dotted section names (model.dim=128).
/// '#' starts a comment; whitespace around keys and values is trimmed.
class KVConfig {
public:
    static KVConfig parse_string(const std::string& text) {
        KVConfig cfg;
        std::istringstream is(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config: missing '=' on line " + std::to_string(line_no));
            auto key = trim(line.substr(0, eq));
            auto value = trim(line.substr(eq + 1));
            if (key.empty())
                throw std::runtime_error("config: empty key on line " + std::to_string(line_no));
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static KVConfig parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
        std::ostringstream buf;
        buf << is.rdbuf();
        return parse_string(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback = {}) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (const std::exception&) {
            throw std::runtime_error("config: '" + key + "' is not an integer: " + it->second);
        }
    }

    double get_float(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw std::runtime_error("config: '" + key + "' is not a number: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw std::runtime_error("config: '" + key + "' is not a boolean: " + it->second);
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    /// Sorted key=value lines; a run is reproducible from this plus the seed.
    std::string canonical() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << '=' << v << '\n';
        return os.str();
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        auto e = s.find_last_not_of(" \t\r\n");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> kv_;
};

} // namespace sat
