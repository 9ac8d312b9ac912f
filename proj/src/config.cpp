#include "simcis/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace simcis {

namespace {

enum class KeyType { Int, Double, Bool, Enum };

struct KeySpec {
    KeyType type;
    std::string def;
    std::vector<std::string> allowed;  // Enum only
};

const std::map<std::string, KeySpec>& registry() {
    static const std::map<std::string, KeySpec> reg = {
        {"model.image_size", {KeyType::Int, "32", {}}},
        {"model.dim", {KeyType::Int, "64", {}}},
        {"model.levels", {KeyType::Int, "3", {}}},
        {"model.encoder_channels", {KeyType::Int, "32", {}}},
        {"model.decoder_layers", {KeyType::Int, "3", {}}},
        {"model.queries", {KeyType::Int, "20", {}}},
        {"model.attn_heads", {KeyType::Int, "4", {}}},
        {"model.ffn_hidden", {KeyType::Int, "128", {}}},
        {"model.attention_order", {KeyType::Enum, "cross_first", {"cross_first", "self_first"}}},

        {"qpa.enabled", {KeyType::Bool, "true", {}}},
        {"qpa.stop_gradient", {KeyType::Bool, "true", {}}},
        {"qpa.freeze_old_prototypes", {KeyType::Bool, "false", {}}},
        {"qpa.prototype_init_scale", {KeyType::Double, "0.02", {}}},
        {"qpa.selection_loss_weight", {KeyType::Double, "2", {}}},

        {"csl.enabled", {KeyType::Bool, "true", {}}},
        {"csl.weight", {KeyType::Double, "2", {}}},

        {"vq.enabled", {KeyType::Bool, "true", {}}},
        {"vq.queue_capacity", {KeyType::Int, "20", {}}},
        {"vq.per_batch", {KeyType::Int, "80", {}}},

        {"psd.enabled", {KeyType::Bool, "true", {}}},
        {"psd.confidence_threshold", {KeyType::Double, "0.5", {}}},

        {"infer.confidence_threshold", {KeyType::Double, "0.5", {}}},
        {"infer.mask_threshold", {KeyType::Double, "0.5", {}}},

        {"loss.class_weight", {KeyType::Double, "2", {}}},
        {"loss.bce_weight", {KeyType::Double, "5", {}}},
        {"loss.dice_weight", {KeyType::Double, "5", {}}},
        {"loss.no_object_weight", {KeyType::Double, "0.1", {}}},

        {"optim.base_lr", {KeyType::Double, "0.0001", {}}},
        {"optim.incr_lr", {KeyType::Double, "5e-05", {}}},
        {"optim.lr_decay_factor", {KeyType::Double, "0.1", {}}},
        {"optim.lr_decay_at", {KeyType::Double, "0.9", {}}},
        {"optim.weight_decay", {KeyType::Double, "0.05", {}}},

        {"plan.base_classes", {KeyType::Int, "8", {}}},
        {"plan.incr_classes", {KeyType::Int, "2", {}}},
        {"plan.order", {KeyType::Enum, "ascending", {"ascending", "descending", "shuffle"}}},
        {"plan.order_seed", {KeyType::Int, "0", {}}},
        {"plan.base_iters", {KeyType::Int, "2000", {}}},
        {"plan.incr_iters_per_class", {KeyType::Int, "200", {}}},
        {"plan.seed", {KeyType::Int, "1", {}}},

        {"data.num_classes", {KeyType::Int, "16", {}}},
        {"data.train_size", {KeyType::Int, "256", {}}},
        {"data.eval_size", {KeyType::Int, "64", {}}},
        {"data.seed", {KeyType::Int, "101", {}}},
    };
    return reg;
}

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Shortest decimal text that parses back to exactly the same double.
std::string render_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

std::string canonicalize(const std::string& key, const KeySpec& spec, const std::string& raw) {
    const std::string v = trim(raw);
    switch (spec.type) {
        case KeyType::Int: {
            errno = 0;
            char* end = nullptr;
            const long long n = std::strtoll(v.c_str(), &end, 10);
            if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
                throw ConfigError("config: key '" + key + "' needs an integer, got '" + v + "'");
            return std::to_string(n);
        }
        case KeyType::Double: {
            char* end = nullptr;
            const double d = std::strtod(v.c_str(), &end);
            if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
                throw ConfigError("config: key '" + key + "' needs a finite number, got '" + v + "'");
            return render_double(d);
        }
        case KeyType::Bool: {
            if (v == "true" || v == "1" || v == "on") return "true";
            if (v == "false" || v == "0" || v == "off") return "false";
            throw ConfigError("config: key '" + key + "' needs a boolean, got '" + v + "'");
        }
        case KeyType::Enum: {
            if (std::find(spec.allowed.begin(), spec.allowed.end(), v) != spec.allowed.end())
                return v;
            std::string opts;
            for (const auto& a : spec.allowed) opts += (opts.empty() ? "" : ", ") + a;
            throw ConfigError("config: key '" + key + "' must be one of {" + opts + "}, got '" +
                              v + "'");
        }
    }
    throw ConfigError("config: unreachable");
}

size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> row(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        size_t diag = row[0];
        row[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] != b[j - 1] ? 1 : 0)});
            diag = up;
        }
    }
    return row[b.size()];
}

}  // namespace

Config Config::defaults() {
    Config c;
    for (const auto& [key, spec] : registry()) c.values_[key] = spec.def;
    return c;
}

std::vector<std::string> Config::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, spec] : registry()) keys.push_back(key);
    return keys;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    if (it == registry().end())
        throw ConfigError("config: unknown key '" + key + "' (did you mean '" +
                          suggest_key(key) + "'?)");
    values_[key] = canonicalize(key, it->second, value);
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

int64_t Config::get_int(const std::string& key) const { return std::stoll(get(key)); }

double Config::get_double(const std::string& key) const { return std::stod(get(key)); }

bool Config::get_bool(const std::string& key) const { return get(key) == "true"; }

std::string Config::serialize() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
    return out;
}

std::string Config::hash() const {
    const std::string text = serialize();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Config parse_config_text(const std::string& text) {
    Config cfg = Config::defaults();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + stripped + "'");
        try {
            cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

void apply_overrides(Config& cfg, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config override '" + ov + "': expected key=value");
        cfg.set(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
}

std::string suggest_key(const std::string& key) {
    std::string best;
    size_t best_d = static_cast<size_t>(-1);
    for (const auto& known : Config::known_keys()) {
        const size_t d = edit_distance(key, known);
        if (d < best_d) {
            best_d = d;
            best = known;
        }
    }
    return best;
}

}  // namespace simcis
