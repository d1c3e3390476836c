#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tse/audio.hpp"
#include "tse/rng.hpp"

namespace tse {

inline constexpr int kEmbeddingDim = 512;

enum class RefProvenance { Audio, Text, Null };

// 512-d reference vector x_r. Audio/text embeddings are unit norm; the null
// reference is the model's learned unconditional vector.
struct ReferenceEmbedding {
    Eigen::VectorXd data;  // [512]
    RefProvenance provenance = RefProvenance::Audio;

    bool is_null() const { return provenance == RefProvenance::Null; }
};

// Contract for audio/text encoders that share one embedding space.
class EmbedderPlugin {
public:
    virtual ~EmbedderPlugin() = default;
    virtual std::string name() const = 0;
    virtual bool can_embed_audio() const = 0;
    virtual bool can_embed_text() const = 0;
    virtual ReferenceEmbedding embed_audio(const Wave& y_r) const = 0;
    virtual ReferenceEmbedding embed_text(const std::string& label) const = 0;
};

// Capability-checked entry points used by pipelines.
ReferenceEmbedding embed_audio_reference(const Wave& y_r, const EmbedderPlugin& plugin);
ReferenceEmbedding embed_text_reference(const std::string& label, const EmbedderPlugin& plugin);

// Uniformly picks one of the three training templates and substitutes the
// class label: "[CLS]", "An audio clip of [CLS]", "The sound of [CLS]".
std::string augment_text(const std::string& label, Rng& rng);

// Per-feature standardization plus class centroids fitted on a corpus.
// Persisted alongside the dataset manifest.
struct EmbedderStats {
    Eigen::VectorXd feature_mean;  // [F]
    Eigen::VectorXd feature_std;   // [F]
    std::map<std::string, Eigen::VectorXd> class_centroids;  // label -> [512]

    void save(const std::string& path) const;
    static EmbedderStats load(const std::string& path);
};

// Training-free desk-scale embedder: gain-invariant log-mel statistics
// (per-band mean/std, spectral centroid and rolloff trajectory stats)
// standardized per feature and mapped to 512-d by a fixed orthonormal
// projection, then L2 normalized. The text pathway returns the stored
// audio-embedding centroid of the class.
class MelStatsEmbedder : public EmbedderPlugin {
public:
    static constexpr int kMelBands = 40;
    static constexpr int kFeatureDim = 2 * kMelBands + 4;

    explicit MelStatsEmbedder(EmbedderStats stats);

    std::string name() const override { return "mel-stats"; }
    bool can_embed_audio() const override { return true; }
    bool can_embed_text() const override { return true; }
    ReferenceEmbedding embed_audio(const Wave& y_r) const override;
    ReferenceEmbedding embed_text(const std::string& label) const override;

    // Raw gain-invariant feature vector; exposed for fitting/testing.
    static Eigen::VectorXd features(const Wave& w);

    // Fits standardization and class centroids over (wave, label) pairs.
    static EmbedderStats fit(const std::vector<std::pair<const Wave*, std::string>>& corpus);

    const EmbedderStats& stats() const { return stats_; }

private:
    Eigen::VectorXd embed_features(const Eigen::VectorXd& feats) const;

    EmbedderStats stats_;
    Eigen::MatrixXd projection_;  // [512, F], fixed orthonormal columns
};

}  // namespace tse
