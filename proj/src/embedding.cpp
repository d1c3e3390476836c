#include "tse/embedding.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "tse/error.hpp"

namespace tse {

namespace {

constexpr int kFrameLen = 960;
constexpr int kFrameHop = 480;
constexpr double kMinDuration = 0.3;
constexpr uint64_t kProjectionSeed = 0x5eedf00du;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular mel filterbank over the rfft bins of a kFrameLen window.
Eigen::MatrixXd mel_filterbank(int bands, int sample_rate, double f_lo, double f_hi) {
    const int bins = kFrameLen / 2 + 1;
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(bands, bins);
    const double m_lo = hz_to_mel(f_lo), m_hi = hz_to_mel(f_hi);
    std::vector<double> edges(static_cast<size_t>(bands) + 2);
    for (int i = 0; i < bands + 2; ++i)
        edges[static_cast<size_t>(i)] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (bands + 1));
    const double bin_hz = static_cast<double>(sample_rate) / kFrameLen;
    for (int b = 0; b < bands; ++b) {
        const double l = edges[static_cast<size_t>(b)], c = edges[static_cast<size_t>(b) + 1],
                     r = edges[static_cast<size_t>(b) + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = k * bin_hz;
            if (f > l && f < r) fb(b, k) = (f <= c) ? (f - l) / (c - l) : (r - f) / (r - c);
        }
    }
    return fb;
}

// Power spectrum of hann-windowed frames, [frames, bins]. Direct DFT against
// a precomputed basis; frame counts at desk scale keep this cheap.
Eigen::MatrixXd power_frames(const Wave& w) {
    const int n = static_cast<int>(w.samples.size());
    const int frames = std::max(1, 1 + (n - kFrameLen) / kFrameHop);
    const int bins = kFrameLen / 2 + 1;

    static const auto basis = [] {
        Eigen::MatrixXd cos_b(kFrameLen, bins), sin_b(kFrameLen, bins);
        for (int i = 0; i < kFrameLen; ++i) {
            const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFrameLen);
            for (int k = 0; k < bins; ++k) {
                const double a = 2.0 * std::numbers::pi * i * k / kFrameLen;
                cos_b(i, k) = win * std::cos(a);
                sin_b(i, k) = win * std::sin(a);
            }
        }
        return std::make_pair(cos_b, sin_b);
    }();

    Eigen::MatrixXd fr(frames, kFrameLen);
    fr.setZero();
    for (int t = 0; t < frames; ++t)
        for (int i = 0; i < kFrameLen; ++i) {
            const int idx = t * kFrameHop + i;
            if (idx < n) fr(t, i) = w.samples[static_cast<size_t>(idx)];
        }
    Eigen::MatrixXd re = fr * basis.first;   // [frames, bins]
    Eigen::MatrixXd im = fr * basis.second;  // [frames, bins]
    return re.array().square() + im.array().square();
}

}  // namespace

ReferenceEmbedding embed_audio_reference(const Wave& y_r, const EmbedderPlugin& plugin) {
    if (!plugin.can_embed_audio())
        throw CapabilityError("embedder '" + plugin.name() + "' cannot embed audio");
    return plugin.embed_audio(y_r);
}

ReferenceEmbedding embed_text_reference(const std::string& label, const EmbedderPlugin& plugin) {
    if (label.empty()) throw ParameterError("text reference label must be non-empty");
    if (!plugin.can_embed_text())
        throw CapabilityError("embedder '" + plugin.name() + "' cannot embed text");
    return plugin.embed_text(label);
}

std::string augment_text(const std::string& label, Rng& rng) {
    switch (rng.uniform_int(0, 2)) {
        case 0: return label;
        case 1: return "An audio clip of " + label;
        default: return "The sound of " + label;
    }
}

Eigen::VectorXd MelStatsEmbedder::features(const Wave& w) {
    if (w.sample_rate != kSampleRate)
        throw InputError("embedder expects 24 kHz audio");
    if (w.duration_s() < kMinDuration)
        throw InputError("reference audio shorter than 0.3 s");

    static const Eigen::MatrixXd fb = mel_filterbank(kMelBands, kSampleRate, 0.0, 2400.0);
    const Eigen::MatrixXd pow_sp = power_frames(w);              // [T, bins]
    Eigen::MatrixXd mel = pow_sp * fb.transpose();               // [T, bands]
    Eigen::MatrixXd log_mel = (mel.array() + 1e-10).log10();     // [T, bands]

    const int T = static_cast<int>(log_mel.rows());
    Eigen::VectorXd band_mean = log_mel.colwise().mean();
    Eigen::VectorXd band_std(kMelBands);
    for (int b = 0; b < kMelBands; ++b) {
        const double m = band_mean(b);
        band_std(b) = std::sqrt((log_mel.col(b).array() - m).square().sum() / T);
    }
    // Subtracting the clip-wide mean log energy makes the band means exactly
    // invariant to waveform gain.
    band_mean.array() -= band_mean.mean();

    const int bins = static_cast<int>(pow_sp.cols());
    const double bin_hz = static_cast<double>(kSampleRate) / kFrameLen;
    Eigen::VectorXd centroid(T), rolloff(T);
    for (int t = 0; t < T; ++t) {
        double total = pow_sp.row(t).sum() + 1e-20;
        double num = 0.0;
        for (int k = 0; k < bins; ++k) num += pow_sp(t, k) * k * bin_hz;
        centroid(t) = num / total;
        double acc = 0.0;
        int k_roll = bins - 1;
        for (int k = 0; k < bins; ++k) {
            acc += pow_sp(t, k);
            if (acc >= 0.85 * total) {
                k_roll = k;
                break;
            }
        }
        rolloff(t) = k_roll * bin_hz;
    }
    auto mean_std = [T](const Eigen::VectorXd& v) {
        const double m = v.mean();
        const double s = std::sqrt((v.array() - m).square().sum() / T);
        return std::make_pair(m, s);
    };
    auto [c_m, c_s] = mean_std(centroid);
    auto [r_m, r_s] = mean_std(rolloff);

    Eigen::VectorXd f(kFeatureDim);
    f << band_mean, band_std, c_m / 1000.0, c_s / 1000.0, r_m / 1000.0, r_s / 1000.0;
    return f;
}

MelStatsEmbedder::MelStatsEmbedder(EmbedderStats stats) : stats_(std::move(stats)) {
    if (stats_.feature_mean.size() != kFeatureDim || stats_.feature_std.size() != kFeatureDim)
        throw ConfigError("embedder stats have wrong feature dimension");
    // Fixed orthonormal projection: QR of a seeded gaussian matrix.
    Rng rng(kProjectionSeed);
    Eigen::MatrixXd g(kEmbeddingDim, kFeatureDim);
    for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    projection_ = Eigen::MatrixXd(qr.householderQ()).leftCols(kFeatureDim);
}

Eigen::VectorXd MelStatsEmbedder::embed_features(const Eigen::VectorXd& feats) const {
    Eigen::VectorXd z = (feats - stats_.feature_mean).array() / stats_.feature_std.array();
    Eigen::VectorXd e = projection_ * z;
    const double n = e.norm();
    if (!(n > 0.0) || !e.allFinite()) throw NumericError("degenerate embedding");
    return e / n;
}

ReferenceEmbedding MelStatsEmbedder::embed_audio(const Wave& y_r) const {
    return {embed_features(features(y_r)), RefProvenance::Audio};
}

ReferenceEmbedding MelStatsEmbedder::embed_text(const std::string& label) const {
    auto it = stats_.class_centroids.find(label);
    if (it == stats_.class_centroids.end())
        throw LookupError("unknown class label for text reference: '" + label + "'");
    return {it->second, RefProvenance::Text};
}

EmbedderStats MelStatsEmbedder::fit(
    const std::vector<std::pair<const Wave*, std::string>>& corpus) {
    if (corpus.empty()) throw ParameterError("cannot fit embedder stats on an empty corpus");
    const int n = static_cast<int>(corpus.size());
    Eigen::MatrixXd feats(n, kFeatureDim);
    for (int i = 0; i < n; ++i) feats.row(i) = features(*corpus[static_cast<size_t>(i)].first);

    EmbedderStats st;
    st.feature_mean = feats.colwise().mean();
    st.feature_std.resize(kFeatureDim);
    for (int j = 0; j < kFeatureDim; ++j) {
        const double m = st.feature_mean(j);
        const double s = std::sqrt((feats.col(j).array() - m).square().sum() / n);
        st.feature_std(j) = std::max(s, 1e-6);
    }

    MelStatsEmbedder emb(st);
    std::map<std::string, std::pair<Eigen::VectorXd, int>> acc;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd e = emb.embed_features(feats.row(i).transpose());
        auto& [sum, count] = acc[corpus[static_cast<size_t>(i)].second];
        if (count == 0) sum = Eigen::VectorXd::Zero(kEmbeddingDim);
        sum += e;
        ++count;
    }
    for (auto& [label, pr] : acc) {
        Eigen::VectorXd c = pr.first / pr.second;
        const double nn = c.norm();
        if (!(nn > 0.0)) throw NumericError("degenerate class centroid for '" + label + "'");
        st.class_centroids[label] = c / nn;
    }
    return st;
}

void EmbedderStats::save(const std::string& path) const {
    nlohmann::json j;
    j["version"] = 1;
    j["feature_mean"] = std::vector<double>(feature_mean.data(), feature_mean.data() + feature_mean.size());
    j["feature_std"] = std::vector<double>(feature_std.data(), feature_std.data() + feature_std.size());
    nlohmann::json cls = nlohmann::json::object();
    for (const auto& [label, c] : class_centroids)
        cls[label] = std::vector<double>(c.data(), c.data() + c.size());
    j["class_centroids"] = cls;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write embedder stats: " + path);
    f << j.dump(2) << "\n";
}

EmbedderStats EmbedderStats::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open embedder stats: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported embedder stats version");
    EmbedderStats st;
    auto fm = j.at("feature_mean").get<std::vector<double>>();
    auto fs = j.at("feature_std").get<std::vector<double>>();
    st.feature_mean = Eigen::Map<Eigen::VectorXd>(fm.data(), static_cast<Eigen::Index>(fm.size()));
    st.feature_std = Eigen::Map<Eigen::VectorXd>(fs.data(), static_cast<Eigen::Index>(fs.size()));
    for (auto& [label, arr] : j.at("class_centroids").items()) {
        auto v = arr.get<std::vector<double>>();
        st.class_centroids[label] =
            Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return st;
}

}  // namespace tse
