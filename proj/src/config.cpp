#include "fakepcd/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace fakepcd::config {

namespace {

std::string trim(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = text.find_last_not_of(" \t\r");
    return text.substr(begin, end - begin + 1);
}

} // namespace

void Settings::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    load_string(buffer.str(), path.string());
}

void Settings::load_string(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']')
                throw ConfigError(origin + " line " + std::to_string(line_no) +
                                  ": unterminated [section] header");
            section = trim(stripped.substr(1, stripped.size() - 2));
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + " line " + std::to_string(line_no) +
                              ": expected key=value");
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty())
            throw ConfigError(origin + " line " + std::to_string(line_no) + ": empty key");
        const std::string full_key = section.empty() ? key : section + "." + key;
        file_values_[full_key] = trim(stripped.substr(eq + 1));
    }
}

void Settings::set_override(const std::string& key, const std::string& value) {
    overrides_[key] = value;
}

const std::string* Settings::lookup(const std::string& key) const {
    if (const auto it = overrides_.find(key); it != overrides_.end()) {
        consumed_[key] = true;
        return &it->second;
    }
    if (const auto it = file_values_.find(key); it != file_values_.end()) {
        consumed_[key] = true;
        return &it->second;
    }
    return nullptr;
}

bool Settings::has(const std::string& key) const {
    return overrides_.count(key) > 0 || file_values_.count(key) > 0;
}

std::string Settings::get(const std::string& key, const std::string& fallback) const {
    const std::string* found = lookup(key);
    const std::string value = found ? *found : fallback;
    resolved_[key] = value;
    return value;
}

long long Settings::get_int(const std::string& key, long long fallback) const {
    const std::string text = get(key, std::to_string(fallback));
    try {
        std::size_t used = 0;
        const long long value = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return value;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
    }
}

double Settings::get_double(const std::string& key, double fallback) const {
    std::ostringstream fallback_text;
    fallback_text << fallback;
    const std::string text = get(key, fallback_text.str());
    try {
        std::size_t used = 0;
        const double value = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return value;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
    }
}

bool Settings::get_bool(const std::string& key, bool fallback) const {
    std::string text = get(key, fallback ? "true" : "false");
    std::transform(text.begin(), text.end(), text.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

std::uint64_t Settings::get_seed(const std::string& key, std::uint64_t fallback) const {
    const std::string text = get(key, std::to_string(fallback));
    try {
        std::size_t used = 0;
        const std::uint64_t value = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return value;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a seed, got '" + text + "'");
    }
}

std::vector<std::string> Settings::get_list(const std::string& key,
                                            const std::vector<std::string>& fallback) const {
    const std::string text = get(key, join_list(fallback));
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

void Settings::reject_unconsumed() const {
    for (const auto& [key, value] : file_values_) {
        (void)value;
        if (!consumed_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    for (const auto& [key, value] : overrides_) {
        (void)value;
        if (!consumed_.count(key)) throw ConfigError("unknown option key '" + key + "'");
    }
}

std::vector<std::pair<std::string, std::string>> Settings::resolved() const {
    return {resolved_.begin(), resolved_.end()};
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

} // namespace fakepcd::config
