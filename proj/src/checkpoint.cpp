#include "tse/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tse/error.hpp"

namespace tse {

namespace {
constexpr char kMagic[8] = {'T', 'S', 'E', 'C', 'K', 'P', '0', '1'};
constexpr int kFormatVersion = 1;
}  // namespace

nlohmann::json backbone_config_to_json(const BackboneConfig& cfg) {
    return {{"depth", cfg.depth},
            {"width", cfg.width},
            {"heads", cfg.heads},
            {"latent_channels", cfg.latent_channels},
            {"rope_base", cfg.rope_base},
            {"mlp_ratio", cfg.mlp_ratio},
            {"use_skips", cfg.use_skips}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
    BackboneConfig cfg;
    cfg.depth = j.at("depth").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.latent_channels = j.at("latent_channels").get<int>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
    cfg.use_skips = j.at("use_skips").get<bool>();
    cfg.validate();
    return cfg;
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json hdr;
    hdr["version"] = kFormatVersion;
    hdr["config"] = backbone_config_to_json(config);
    hdr["epoch"] = epoch;
    hdr["global_step"] = global_step;
    hdr["has_optimizer"] = has_optimizer;
    hdr["adam_step"] = adam_step;
    hdr["schedule"] = schedule_json.empty() ? nlohmann::json() : nlohmann::json::parse(schedule_json);
    hdr["metadata"] = metadata;
    hdr["ema"] = nullptr;  // reserved

    nlohmann::json tlist = nlohmann::json::array();
    uint64_t offset = 0;
    auto add_tensors = [&](const char* prefix, DitParams<double>& p) {
        for (auto& t : collect_tensors(p)) {
            tlist.push_back({{"name", std::string(prefix) + t.name},
                             {"rows", t.rows},
                             {"cols", t.cols},
                             {"offset", offset}});
            offset += static_cast<uint64_t>(t.size()) * sizeof(double);
        }
    };
    add_tensors("", const_cast<DitParams<double>&>(params));
    if (has_optimizer) {
        add_tensors("adam_m/", const_cast<DitParams<double>&>(adam_m));
        add_tensors("adam_v/", const_cast<DitParams<double>&>(adam_v));
    }
    hdr["tensors"] = tlist;

    const std::string hdr_str = hdr.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    const uint64_t hdr_len = hdr_str.size();
    f.write(reinterpret_cast<const char*>(&hdr_len), 8);
    f.write(hdr_str.data(), static_cast<std::streamsize>(hdr_str.size()));
    auto write_params = [&](DitParams<double>& p) {
        for (auto& t : collect_tensors(p)) {
            f.write(reinterpret_cast<const char*>(t.data),
                    static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
    };
    write_params(const_cast<DitParams<double>&>(params));
    if (has_optimizer) {
        write_params(const_cast<DitParams<double>&>(adam_m));
        write_params(const_cast<DitParams<double>&>(adam_v));
    }
    if (!f) throw IoError("short write to checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
    uint64_t hdr_len = 0;
    f.read(reinterpret_cast<char*>(&hdr_len), 8);
    std::string hdr_str(hdr_len, '\0');
    f.read(hdr_str.data(), static_cast<std::streamsize>(hdr_len));
    if (!f) throw IoError("truncated checkpoint header: " + path);
    nlohmann::json hdr = nlohmann::json::parse(hdr_str);
    if (hdr.at("version").get<int>() != kFormatVersion)
        throw ConfigError("unsupported checkpoint version");

    Checkpoint ck;
    ck.config = backbone_config_from_json(hdr.at("config"));
    ck.epoch = hdr.at("epoch").get<int64_t>();
    ck.global_step = hdr.at("global_step").get<int64_t>();
    ck.has_optimizer = hdr.at("has_optimizer").get<bool>();
    ck.adam_step = hdr.at("adam_step").get<int64_t>();
    ck.metadata = hdr.at("metadata");
    ck.schedule_json = hdr.at("schedule").is_null() ? "" : hdr.at("schedule").dump();

    ck.params = make_params<double>(ck.config);
    if (ck.has_optimizer) {
        ck.adam_m = make_params<double>(ck.config);
        ck.adam_v = make_params<double>(ck.config);
    }
    auto read_params = [&](DitParams<double>& p) {
        for (auto& t : collect_tensors(p)) {
            f.read(reinterpret_cast<char*>(t.data),
                   static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
    };
    read_params(ck.params);
    if (ck.has_optimizer) {
        read_params(ck.adam_m);
        read_params(ck.adam_v);
    }
    if (!f) throw IoError("truncated checkpoint tensors: " + path);
    return ck;
}

}  // namespace tse
