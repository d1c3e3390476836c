#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "tse/classifier.hpp"
#include "tse/codec.hpp"
#include "tse/diffusion.hpp"
#include "tse/embedding.hpp"
#include "tse/mixture.hpp"

namespace tse {

// Squared Frechet distance between gaussian fits of two embedding sets
// (rows are samples). Covariances are regularized with eps_reg * I before
// the matrix square root; tiny negative results from numerical noise are
// clamped to zero.
double frechet_distance(const Eigen::MatrixXd& emb_a, const Eigen::MatrixXd& emb_b,
                        double eps_reg = 1e-6);

// KL(p_ref || p_est) with eps-floored probabilities.
double paired_kl(const Eigen::VectorXd& p_ref, const Eigen::VectorXd& p_est, double eps = 1e-10);

double embedding_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct EvalItemRecord {
    std::string id;
    std::string class_label;
    double cosine_audio = 0.0;
    double cosine_text = 0.0;  // NaN when the class has no text centroid
    double kl = 0.0;
};

struct EvalReport {
    std::vector<EvalItemRecord> items;
    double fd = 0.0;
    double mean_kl = 0.0;
    double mean_cosine_audio = 0.0;
    double mean_cosine_text = 0.0;
    int skipped = 0;
    nlohmann::json metadata;

    void recompute_aggregates();  // means from per-item records (FD is set-level)
    void save_jsonl(const std::string& path) const;
    // One aggregate row mirroring the objective-metrics table layout; the
    // ViSQOL column stays empty for external import.
    void save_csv(const std::string& path) const;
};

enum class EvalOracle { None, Mixture, GroundTruth };

struct EvalOptions {
    SamplerConfig sampler;
    std::string modality = "audio";  // audio | text (reference source)
    EvalOracle oracle = EvalOracle::None;
    std::string split = "test";
    int max_items = 0;               // 0 = all
    std::string audio_out_dir;       // optional extraction dump
};

// Batch evaluation harness. For every manifest item of the split: produce
// the extraction (model sampling, or an oracle pass-through), then score
// cosine to the ground-truth audio embedding, cosine to the class centroid,
// paired KL of classifier posteriors, and a set-level FD over classifier
// features. Items with missing ground truth are skipped and counted.
EvalReport evaluate(const DatasetManifest& manifest, const VelocityPredictor* model,
                    const NoiseSchedule* schedule, const CodecPlugin& codec,
                    const MelStatsEmbedder& embedder, const ClassifierPlugin* classifier,
                    const EvalOptions& options);

}  // namespace tse
