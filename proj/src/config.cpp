#include "tse/config.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace tse {

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
}

nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user,
                            const std::string& prefix) {
    nlohmann::json out = defaults;
    for (auto& [key, value] : user.items()) {
        const std::string full = prefix.empty() ? key : prefix + "." + key;
        if (!defaults.contains(key)) throw ConfigError("unknown config key: " + full);
        if (defaults[key].is_object() && value.is_object()) {
            out[key] = merge_config(defaults[key], value, full);
        } else {
            out[key] = value;
        }
    }
    return out;
}

void apply_override(nlohmann::json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be dotted.key=value, got: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json* node = &cfg;
    size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const size_t dot = key.find('.', start);
        parts.push_back(key.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            throw ConfigError("unknown config key: " + key);
        node = &(*node)[parts[i]];
    }
    if (!node->contains(parts.back())) throw ConfigError("unknown config key: " + key);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;  // plain string
    }
    (*node)[parts.back()] = value;
}

void write_resolved_config(const nlohmann::json& cfg, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / "resolved_config.json");
    if (!f) throw IoError("cannot write resolved config in " + dir);
    f << cfg.dump(2) << "\n";
}

}  // namespace tse
