#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace simcis {

// Invalid key, malformed value, or unreadable file. CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat dotted-key configuration. Every known key always carries a value (the
// default until overridden), values are stored in canonical text form, and
// unknown keys are rejected with a nearest-match suggestion.
class Config {
public:
    // All keys at their documented defaults.
    static Config defaults();

    // Sorted list of every known key.
    static std::vector<std::string> known_keys();

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    // Validates the key and parses + re-renders the value canonically.
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Canonical text: one sorted "key = value" line per key.
    std::string serialize() const;

    // FNV-1a 64-bit hash of the canonical text, as 16 hex digits.
    std::string hash() const;

    bool operator==(const Config& other) const { return values_ == other.values_; }

    const std::map<std::string, std::string>& items() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Applies "key = value" lines (# comments, blank lines allowed) on top of the
// defaults. Errors carry the 1-based line number.
Config parse_config_text(const std::string& text);
Config load_config_file(const std::string& path);

// Applies --set style "key=value" strings in order.
void apply_overrides(Config& cfg, const std::vector<std::string>& overrides);

// Closest known key by edit distance (for error messages).
std::string suggest_key(const std::string& key);

}  // namespace simcis
