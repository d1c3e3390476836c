#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "tse/error.hpp"

namespace tse {

nlohmann::json load_json_file(const std::string& path);

// Overlays `user` onto `defaults`. Keys absent from the defaults are
// rejected; nested objects merge recursively.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user,
                            const std::string& prefix = "");

// Applies one "dotted.key=value" override; the key must already exist.
// Values parse as JSON literals, falling back to plain strings.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

// Resolved-config logging: every artifact-producing run records the full
// effective configuration next to its outputs.
void write_resolved_config(const nlohmann::json& cfg, const std::string& dir);

}  // namespace tse
