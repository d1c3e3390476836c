#include "tse/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "tse/rng.hpp"

namespace fs = std::filesystem;

namespace tse {

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

nlohmann::json spec_to_json(const DatasetItem& it) {
    const auto& sp = it.spec;
    std::vector<double> snrs, onsets;
    std::vector<int64_t> onset_samples;
    std::vector<std::string> int_assets, int_classes;
    onsets.push_back(static_cast<double>(sp.target_onset_samples) / kSampleRate);
    onset_samples.push_back(sp.target_onset_samples);
    for (const auto& i : sp.interferers) {
        snrs.push_back(i.snr_db);
        onsets.push_back(static_cast<double>(i.onset_samples) / kSampleRate);
        onset_samples.push_back(i.onset_samples);
        int_assets.push_back(i.asset_id);
        int_classes.push_back(i.class_label);
    }
    snrs.push_back(sp.background_snr_db);  // background SNR is the last entry

    nlohmann::json j;
    j["id"] = it.id;
    j["split"] = it.split;
    j["class"] = it.class_label;
    j["mixture_path"] = it.mixture_path;
    j["target_path"] = it.target_path;
    j["reference_path"] = it.reference_path;
    j["snrs"] = snrs;
    j["onsets"] = onsets;  // target first, then interferers (seconds)
    j["onset_samples"] = onset_samples;
    j["seed"] = sp.seed;
    j["target_asset"] = sp.target_asset;
    j["interferer_assets"] = int_assets;
    j["interferer_classes"] = int_classes;
    j["background_asset"] = sp.background_asset;
    j["duration_s"] = sp.duration_s;
    j["ref_fallback_same_asset"] = it.ref_fallback_same_asset;
    j["target_truncated"] = it.target_truncated;
    j["peak_scale"] = it.peak_scale;
    return j;
}

DatasetItem spec_from_json(const nlohmann::json& j) {
    DatasetItem it;
    it.id = j.at("id").get<std::string>();
    it.split = j.at("split").get<std::string>();
    it.class_label = j.at("class").get<std::string>();
    it.mixture_path = j.at("mixture_path").get<std::string>();
    it.target_path = j.at("target_path").get<std::string>();
    it.reference_path = j.at("reference_path").get<std::string>();
    it.ref_fallback_same_asset = j.at("ref_fallback_same_asset").get<bool>();
    it.target_truncated = j.at("target_truncated").get<bool>();
    it.peak_scale = j.at("peak_scale").get<double>();

    auto& sp = it.spec;
    sp.target_asset = j.at("target_asset").get<std::string>();
    sp.target_class = it.class_label;
    sp.background_asset = j.at("background_asset").get<std::string>();
    sp.duration_s = j.at("duration_s").get<double>();
    sp.seed = j.at("seed").get<uint64_t>();
    auto snrs = j.at("snrs").get<std::vector<double>>();
    auto onset_samples = j.at("onset_samples").get<std::vector<int64_t>>();
    auto assets = j.at("interferer_assets").get<std::vector<std::string>>();
    auto classes = j.at("interferer_classes").get<std::vector<std::string>>();
    sp.target_onset_samples = onset_samples.at(0);
    sp.background_snr_db = snrs.back();
    for (size_t k = 0; k < assets.size(); ++k) {
        InterfererSpec is;
        is.asset_id = assets[k];
        is.class_label = classes[k];
        is.onset_samples = onset_samples.at(k + 1);
        is.snr_db = snrs.at(k);
        sp.interferers.push_back(std::move(is));
    }
    return it;
}

}  // namespace

void CorpusManifest::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write corpus manifest: " + path);
    nlohmann::json hdr = {{"type", "header"},
                          {"version", 1},
                          {"entries", entries.size()},
                          {"skipped_files", skipped_files}};
    f << hdr.dump() << "\n";
    for (const auto& e : entries) {
        nlohmann::json j = {{"id", e.id},           {"path", e.path},
                            {"class", e.class_label}, {"duration_s", e.duration_s},
                            {"sample_rate", e.sample_rate}, {"split", e.split}};
        f << j.dump() << "\n";
    }
}

CorpusManifest CorpusManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open corpus manifest: " + path);
    CorpusManifest m;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (first) {
            first = false;
            if (j.value("type", "") == "header") {
                m.skipped_files = j.value("skipped_files", 0);
                continue;
            }
        }
        CorpusEntry e;
        e.id = j.at("id").get<std::string>();
        e.path = j.at("path").get<std::string>();
        e.class_label = j.at("class").get<std::string>();
        e.duration_s = j.at("duration_s").get<double>();
        e.sample_rate = j.at("sample_rate").get<int>();
        e.split = j.at("split").get<std::string>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

const CorpusEntry& CorpusManifest::find(const std::string& id) const {
    for (const auto& e : entries)
        if (e.id == id) return e;
    throw LookupError("asset not found in corpus manifest: " + id);
}

CorpusManifest ingest_corpus(const std::string& root_dir, const std::string& class_map_path,
                             const std::string& out_dir, const IngestConfig& cfg) {
    if (!fs::is_directory(root_dir)) throw IoError("corpus root is not a directory: " + root_dir);

    std::map<std::string, std::string> class_map;  // relative path -> class
    if (!class_map_path.empty()) {
        std::ifstream f(class_map_path);
        if (!f) throw IoError("cannot open class map: " + class_map_path);
        nlohmann::json j = nlohmann::json::parse(f);
        for (auto& [k, v] : j.items()) class_map[k] = v.get<std::string>();
    }

    std::vector<std::pair<std::string, std::string>> files;  // (relative path, class)
    for (const auto& de : fs::recursive_directory_iterator(root_dir)) {
        if (!de.is_regular_file()) continue;
        const std::string ext = de.path().extension().string();
        if (ext != ".wav" && ext != ".WAV") continue;
        const std::string rel = fs::relative(de.path(), root_dir).string();
        std::string cls;
        if (!class_map.empty()) {
            auto it = class_map.find(rel);
            if (it == class_map.end()) continue;  // unmapped files are ignored
            cls = it->second;
        } else {
            const fs::path parent = fs::relative(de.path(), root_dir).parent_path();
            if (parent.empty()) continue;  // top-level files have no class
            cls = parent.filename().string();
        }
        files.emplace_back(rel, cls);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no audio files found under " + root_dir);

    fs::create_directories(out_dir);
    CorpusManifest m;
    std::map<std::string, int> per_class_total;
    for (const auto& [rel, cls] : files) {
        per_class_total[cls];  // record the class even if every file is skipped
        Wave w;
        try {
            w = read_wav((fs::path(root_dir) / rel).string());
        } catch (const Error& e) {
            std::fprintf(stderr, "[ingest] skipping unreadable file %s: %s\n", rel.c_str(), e.what());
            ++m.skipped_files;
            continue;
        }
        w = resample(w, kSampleRate);
        const double dur = w.duration_s();
        if (dur < cfg.min_duration_s || dur > cfg.max_duration_s) {
            ++m.skipped_files;
            continue;
        }
        if (rms(w.samples) < 1e-8) {  // silent assets would break SNR scaling
            std::fprintf(stderr, "[ingest] skipping silent file %s\n", rel.c_str());
            ++m.skipped_files;
            continue;
        }
        CorpusEntry e;
        e.id = cls + "/" + fs::path(rel).stem().string();
        e.class_label = cls;
        e.duration_s = dur;
        e.sample_rate = kSampleRate;
        fs::create_directories(fs::path(out_dir) / cls);
        e.path = (fs::path(out_dir) / cls / (fs::path(rel).stem().string() + ".wav")).string();
        write_wav(e.path, w, WavEncoding::Float32);
        ++per_class_total[cls];
        m.entries.push_back(std::move(e));
    }
    for (const auto& [cls, n] : per_class_total)
        if (n == 0) throw InputError("class has no usable audio: " + cls);

    // Per-class split assignment, seeded and independent of corpus size.
    std::map<std::string, std::vector<size_t>> by_class;
    for (size_t i = 0; i < m.entries.size(); ++i) by_class[m.entries[i].class_label].push_back(i);
    for (auto& [cls, idx] : by_class) {
        Rng rng(derive_seed(cfg.split_seed, 0x511e5ULL, fnv1a(cls)));
        for (size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        const auto n = idx.size();
        const auto n_train = static_cast<size_t>(std::lround(cfg.train_frac * n));
        const auto n_valid = static_cast<size_t>(std::lround(cfg.valid_frac * n));
        for (size_t i = 0; i < n; ++i) {
            auto& e = m.entries[idx[i]];
            e.split = (i < n_train) ? "train" : (i < n_train + n_valid) ? "valid" : "test";
        }
    }
    return m;
}

double snr_gain(double target_rms, double interferer_rms, double snr_db) {
    if (!(target_rms > 0.0) || !(interferer_rms > 0.0))
        throw NumericError("snr_gain requires positive RMS values");
    return target_rms / (interferer_rms * std::pow(10.0, snr_db / 20.0));
}

void MixtureSpec::validate() const {
    if (interferers.empty() || interferers.size() > 3)
        throw ParameterError("mixture must have 1 to 3 interferers");
    if (!(duration_s > 0.0)) throw ParameterError("mixture duration must be positive");
    const auto dur_samples = static_cast<int64_t>(std::llround(duration_s * kSampleRate));
    auto check_onset = [&](int64_t onset) {
        if (onset < 0 || onset >= dur_samples)
            throw ParameterError("event onset outside [0, duration)");
    };
    check_onset(target_onset_samples);
    for (const auto& i : interferers) {
        check_onset(i.onset_samples);
        if (i.snr_db < -10.0 - 1e-9 || i.snr_db > 10.0 + 1e-9)
            throw ParameterError("interferer SNR outside [-10, 10] dB");
    }
    if (background_snr_db < -5.0 - 1e-9 || background_snr_db > 10.0 + 1e-9)
        throw ParameterError("background SNR outside [-5, 10] dB");
}

const Wave& AssetStore::get(const std::string& id) {
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
    const CorpusEntry& e = manifest_->find(id);
    Wave w = read_wav(e.path);
    if (w.sample_rate != kSampleRate) throw InputError("corpus asset not at 24 kHz: " + id);
    return cache_.emplace(id, std::move(w)).first->second;
}

void AssetStore::preload_split(const std::string& split) {
    for (const auto& e : manifest_->entries)
        if (e.split == split) get(e.id);
}

MixtureResult synthesize_mixture(const MixtureSpec& spec, AssetStore& assets) {
    spec.validate();
    const auto n = static_cast<int64_t>(std::llround(spec.duration_s * kSampleRate));

    auto place = [n](std::vector<double>& dst, const std::vector<double>& src, int64_t onset,
                     double gain) {
        const int64_t len = std::min<int64_t>(static_cast<int64_t>(src.size()), n - onset);
        for (int64_t i = 0; i < len; ++i) dst[static_cast<size_t>(onset + i)] += gain * src[static_cast<size_t>(i)];
    };

    const Wave& target_clip = assets.get(spec.target_asset);
    const double t_rms = rms(target_clip.samples);

    MixtureResult out;
    out.target_truncated =
        static_cast<int64_t>(target_clip.samples.size()) > n - spec.target_onset_samples;

    std::vector<double> target(static_cast<size_t>(n), 0.0);
    place(target, target_clip.samples, spec.target_onset_samples, 1.0);

    std::vector<double> mix = target;
    for (const auto& i : spec.interferers) {
        const Wave& clip = assets.get(i.asset_id);
        const double g = snr_gain(t_rms, rms(clip.samples), i.snr_db);
        place(mix, clip.samples, i.onset_samples, g);
    }
    {
        const Wave& bg = assets.get(spec.background_asset);
        const double g = snr_gain(t_rms, rms(bg.samples), spec.background_snr_db);
        // Background tiles from the start of the asset to the full duration.
        for (int64_t s = 0; s < n; ++s)
            mix[static_cast<size_t>(s)] +=
                g * bg.samples[static_cast<size_t>(s) % bg.samples.size()];
    }

    const double pk = peak(mix);
    if (pk > 0.999) {
        out.peak_scale = 0.999 / pk;
        for (auto& v : mix) v *= out.peak_scale;
        for (auto& v : target) v *= out.peak_scale;
    }
    out.mixture = {std::move(mix), kSampleRate};
    out.target = {std::move(target), kSampleRate};
    return out;
}

void DatasetBuildConfig::validate() const {
    if (mixtures_per_file < 1) throw ParameterError("mixtures_per_file must be >= 1");
    if (!(duration_s > 0.0)) throw ParameterError("duration must be positive");
    if (interferer_snr_lo < -10.0 || interferer_snr_hi > 10.0 ||
        interferer_snr_lo > interferer_snr_hi)
        throw ParameterError("interferer SNR range must lie within [-10, 10] dB");
    if (background_snr_lo < -5.0 || background_snr_hi > 10.0 ||
        background_snr_lo > background_snr_hi)
        throw ParameterError("background SNR range must lie within [-5, 10] dB");
}

std::map<std::string, int> DatasetManifest::counts_per_split() const {
    std::map<std::string, int> c;
    for (const auto& it : items) ++c[it.split];
    return c;
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write dataset manifest: " + path);
    nlohmann::json hdr = {
        {"type", "header"}, {"version", 1}, {"items", items.size()}, {"counts", counts_per_split()}};
    f << hdr.dump() << "\n";
    for (const auto& it : items) f << spec_to_json(it).dump() << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset manifest: " + path);
    DatasetManifest m;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (first) {
            first = false;
            if (j.value("type", "") == "header") continue;
        }
        m.items.push_back(spec_from_json(j));
    }
    return m;
}

DatasetManifest build_dataset(const DatasetBuildConfig& cfg, const CorpusManifest& corpus,
                              uint64_t master_seed, const std::string& out_dir) {
    cfg.validate();
    const auto dur_samples = static_cast<int64_t>(std::llround(cfg.duration_s * kSampleRate));

    AssetStore assets(corpus);
    DatasetManifest manifest;

    for (const std::string split : {"train", "valid", "test"}) {
        // Deterministic pools: corpus entry order is already path-sorted.
        std::vector<const CorpusEntry*> targets, backgrounds;
        std::map<std::string, std::vector<const CorpusEntry*>> by_class;
        for (const auto& e : corpus.entries) {
            if (e.split != split) continue;
            if (e.class_label == cfg.background_class) {
                backgrounds.push_back(&e);
            } else {
                targets.push_back(&e);
                by_class[e.class_label].push_back(&e);
            }
        }
        if (targets.empty()) continue;
        if (backgrounds.empty())
            throw InputError("no background assets in split '" + split + "'");

        int seq = 0;
        for (const CorpusEntry* target : targets) {
            for (int j = 0; j < cfg.mixtures_per_file; ++j) {
                const uint64_t item_seed =
                    derive_seed(master_seed, fnv1a(split), fnv1a(target->id), static_cast<uint64_t>(j));
                Rng rng(item_seed);

                MixtureSpec spec;
                spec.seed = item_seed;
                spec.duration_s = cfg.duration_s;
                spec.target_asset = target->id;
                spec.target_class = target->class_label;

                auto draw_onset = [&](double clip_dur) {
                    const auto clip_samples = static_cast<int64_t>(std::llround(clip_dur * kSampleRate));
                    const int64_t margin =
                        std::min<int64_t>(kSampleRate, clip_samples);  // keep >= 1 s (or whole clip) inside
                    const int64_t hi = std::max<int64_t>(dur_samples - margin, 0);
                    return rng.uniform_int(0, hi);
                };

                const int n_int = static_cast<int>(rng.uniform_int(1, 3));
                std::vector<const CorpusEntry*> pool;
                for (const CorpusEntry* e : targets)
                    if (e->class_label != target->class_label) pool.push_back(e);
                if (pool.empty())
                    throw InputError("no interferer candidates outside class '" +
                                     target->class_label + "' in split '" + split + "'");
                for (int k = 0; k < n_int; ++k) {
                    const CorpusEntry* pick =
                        pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
                    InterfererSpec is;
                    is.asset_id = pick->id;
                    is.class_label = pick->class_label;
                    is.snr_db = rng.uniform(cfg.interferer_snr_lo, cfg.interferer_snr_hi);
                    is.onset_samples = draw_onset(pick->duration_s);
                    spec.interferers.push_back(std::move(is));
                }
                spec.target_onset_samples = draw_onset(target->duration_s);
                spec.background_asset =
                    backgrounds[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(backgrounds.size()) - 1))]->id;
                spec.background_snr_db = rng.uniform(cfg.background_snr_lo, cfg.background_snr_hi);

                // Reference: same class, different asset; flagged fallback
                // to the target itself when the class has a single asset.
                DatasetItem item;
                const auto& classmates = by_class[target->class_label];
                if (classmates.size() > 1) {
                    const CorpusEntry* ref = target;
                    while (ref == target)
                        ref = classmates[static_cast<size_t>(
                            rng.uniform_int(0, static_cast<int64_t>(classmates.size()) - 1))];
                    item.reference_path = ref->path;
                } else {
                    item.reference_path = target->path;
                    item.ref_fallback_same_asset = true;
                }

                char id_buf[64];
                std::snprintf(id_buf, sizeof(id_buf), "%s_%06d", split.c_str(), seq++);
                item.id = id_buf;
                item.split = split;
                item.class_label = target->class_label;
                item.spec = spec;

                MixtureResult r = synthesize_mixture(spec, assets);
                fs::create_directories(fs::path(out_dir) / split);
                item.mixture_path = (fs::path(out_dir) / split / (item.id + "_mixture.wav")).string();
                item.target_path = (fs::path(out_dir) / split / (item.id + "_target.wav")).string();
                write_wav(item.mixture_path, r.mixture, WavEncoding::Float32);
                write_wav(item.target_path, r.target, WavEncoding::Float32);
                item.peak_scale = r.peak_scale;
                item.target_truncated = r.target_truncated;
                manifest.items.push_back(std::move(item));
            }
        }
    }
    return manifest;
}

}  // namespace tse
