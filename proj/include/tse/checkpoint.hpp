#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "tse/backbone.hpp"

namespace tse {

// Versioned model container: config, parameter tensors by stable name,
// schedule table, optimizer state and training metadata. An `ema` slot is
// reserved in the header so averaged weights can be added without a format
// break. Tensors are stored as little-endian float64.
struct Checkpoint {
    BackboneConfig config;
    DitParams<double> params;

    bool has_optimizer = false;
    DitParams<double> adam_m, adam_v;
    int64_t adam_step = 0;

    int64_t epoch = 0;
    int64_t global_step = 0;
    std::string schedule_json;
    nlohmann::json metadata;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

nlohmann::json backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

}  // namespace tse
