#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tse/audio.hpp"

namespace tse {

struct CorpusEntry {
    std::string id;
    std::string path;  // 24 kHz mono WAV written by ingestion
    std::string class_label;
    double duration_s = 0.0;
    int sample_rate = kSampleRate;
    std::string split;  // train | valid | test
};

struct CorpusManifest {
    std::vector<CorpusEntry> entries;
    int skipped_files = 0;

    void save(const std::string& path) const;
    static CorpusManifest load(const std::string& path);
    const CorpusEntry& find(const std::string& id) const;
};

struct IngestConfig {
    double min_duration_s = 0.3;
    double max_duration_s = 30.0;
    double train_frac = 0.8;
    double valid_frac = 0.1;
    uint64_t split_seed = 0;
};

// Scans `root_dir` for audio files (class = subdirectory name, or an
// explicit {relative path -> class} JSON map), resamples everything to
// 24 kHz mono into `out_dir`, filters by duration, and assigns per-class
// train/valid/test splits. Deterministic: entries ordered by source path.
CorpusManifest ingest_corpus(const std::string& root_dir, const std::string& class_map_path,
                             const std::string& out_dir, const IngestConfig& cfg);

// Gain g such that 20*log10(target_rms / (g * interferer_rms)) = snr_db.
double snr_gain(double target_rms, double interferer_rms, double snr_db);

struct InterfererSpec {
    std::string asset_id;
    std::string class_label;
    int64_t onset_samples = 0;
    double snr_db = 0.0;
};

// Full provenance of one simulated mixture; re-synthesis from the spec
// reproduces the stored audio bit-exactly.
struct MixtureSpec {
    std::string target_asset;
    std::string target_class;
    int64_t target_onset_samples = 0;
    std::vector<InterfererSpec> interferers;  // 1..3 entries
    std::string background_asset;
    double background_snr_db = 0.0;
    double duration_s = 10.0;
    uint64_t seed = 0;

    void validate() const;
};

// Loads corpus assets once and hands out references by id.
class AssetStore {
public:
    explicit AssetStore(const CorpusManifest& manifest) : manifest_(&manifest) {}
    const Wave& get(const std::string& id);
    void preload_split(const std::string& split);

private:
    const CorpusManifest* manifest_;
    std::map<std::string, Wave> cache_;
};

struct MixtureResult {
    Wave mixture;
    Wave target;  // ground truth at its placement (after any peak rescale)
    double peak_scale = 1.0;
    bool target_truncated = false;
};

MixtureResult synthesize_mixture(const MixtureSpec& spec, AssetStore& assets);

struct DatasetItem {
    std::string id;
    std::string split;
    MixtureSpec spec;
    std::string mixture_path;
    std::string target_path;
    std::string reference_path;
    std::string class_label;
    bool ref_fallback_same_asset = false;
    bool target_truncated = false;
    double peak_scale = 1.0;
};

struct DatasetManifest {
    std::vector<DatasetItem> items;

    std::map<std::string, int> counts_per_split() const;
    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

struct DatasetBuildConfig {
    double duration_s = 10.0;
    int mixtures_per_file = 3;
    double interferer_snr_lo = -10.0, interferer_snr_hi = 10.0;
    double background_snr_lo = -5.0, background_snr_hi = 10.0;
    std::string background_class = "background";

    void validate() const;
};

// Emits `mixtures_per_file` seeded mixture specs per non-background asset,
// synthesizes and writes all audio under out_dir/<split>/, and returns the
// manifest. (master_seed, corpus) fully determine every output byte.
DatasetManifest build_dataset(const DatasetBuildConfig& cfg, const CorpusManifest& corpus,
                              uint64_t master_seed, const std::string& out_dir);

}  // namespace tse
