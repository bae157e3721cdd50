#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fakepcd/errors.hpp"

namespace fakepcd::config {

// Flat key=value files with [section] headers; keys resolve to
// "section.key". '#' starts a comment. Lookup precedence is
// flag overrides > file values > call-site defaults, and every resolved
// value is recorded (with its provenance) for the run manifest.
class Settings {
public:
    Settings() = default;

    void load_file(const std::filesystem::path& path);
    void load_string(const std::string& text, const std::string& origin = "<string>");
    void set_override(const std::string& key, const std::string& value);

    std::string get(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) const;

    bool has(const std::string& key) const;

    // Throws ConfigError naming the first provided key that no command ever
    // looked up; catches typos in config files and flags.
    void reject_unconsumed() const;

    // Every key resolved so far with its final value, sorted by key.
    std::vector<std::pair<std::string, std::string>> resolved() const;

private:
    const std::string* lookup(const std::string& key) const;

    std::map<std::string, std::string> file_values_;
    std::map<std::string, std::string> overrides_;
    mutable std::map<std::string, std::string> resolved_;
    mutable std::map<std::string, bool> consumed_;
};

std::string join_list(const std::vector<std::string>& items);

} // namespace fakepcd::config
