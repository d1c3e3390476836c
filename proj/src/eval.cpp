#include "tse/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tse/rng.hpp"
#include "tse/trainer.hpp"

namespace fs = std::filesystem;

namespace tse {

double frechet_distance(const Eigen::MatrixXd& emb_a, const Eigen::MatrixXd& emb_b,
                        double eps_reg) {
    if (emb_a.rows() < 2 || emb_b.rows() < 2)
        throw ParameterError("frechet_distance needs at least 2 vectors per set");
    if (emb_a.cols() != emb_b.cols())
        throw ParameterError("frechet_distance dimension mismatch");
    const Eigen::Index d = emb_a.cols();

    auto moments = [&](const Eigen::MatrixXd& x) {
        Eigen::VectorXd mu = x.colwise().mean();
        Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
        Eigen::MatrixXd cov =
            centered.transpose() * centered / static_cast<double>(x.rows() - 1);
        cov += eps_reg * Eigen::MatrixXd::Identity(d, d);
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = moments(emb_a);
    auto [mu_b, cov_b] = moments(emb_b);

    // Tr((Sa Sb)^1/2) computed via the symmetric form sqrt(Sa)^T Sb sqrt(Sa).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
    Eigen::VectorXd ev = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_a =
        es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();
    Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_i(inner);
    const double tr_sqrt = es_i.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double fd = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    if (fd < -1e-6) throw NumericError("frechet distance strongly negative; matrix sqrt failed");
    return std::max(fd, 0.0);
}

double paired_kl(const Eigen::VectorXd& p_ref, const Eigen::VectorXd& p_est, double eps) {
    if (p_ref.size() != p_est.size())
        throw ParameterError("paired_kl needs posteriors over the same label set");
    auto check_prob = [](const Eigen::VectorXd& p) {
        if (std::abs(p.sum() - 1.0) > 1e-6 || p.minCoeff() < -1e-12)
            throw ParameterError("paired_kl inputs must be probability vectors");
    };
    check_prob(p_ref);
    check_prob(p_est);
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p_ref.size(); ++i) {
        const double pr = std::max(p_ref(i), eps);
        const double pe = std::max(p_est(i), eps);
        kl += pr * std::log(pr / pe);
    }
    return kl;
}

double embedding_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw ParameterError("embedding_cosine dimension mismatch");
    const double na = a.norm(), nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("embedding_cosine needs nonzero norms");
    return a.dot(b) / (na * nb);
}

void EvalReport::recompute_aggregates() {
    double ca = 0.0, ct = 0.0, kl = 0.0;
    int n_text = 0;
    for (const auto& it : items) {
        ca += it.cosine_audio;
        kl += it.kl;
        if (std::isfinite(it.cosine_text)) {
            ct += it.cosine_text;
            ++n_text;
        }
    }
    const auto n = static_cast<double>(items.size());
    mean_cosine_audio = items.empty() ? 0.0 : ca / n;
    mean_kl = items.empty() ? 0.0 : kl / n;
    mean_cosine_text = n_text == 0 ? std::numeric_limits<double>::quiet_NaN()
                                   : ct / static_cast<double>(n_text);
}

void EvalReport::save_jsonl(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write eval report: " + path);
    nlohmann::json hdr = {{"type", "aggregate"},
                          {"fd", fd},
                          {"mean_kl", mean_kl},
                          {"mean_cosine_audio", mean_cosine_audio},
                          {"mean_cosine_text",
                           std::isfinite(mean_cosine_text) ? nlohmann::json(mean_cosine_text)
                                                           : nlohmann::json()},
                          {"items", items.size()},
                          {"skipped", skipped},
                          {"visqol", nullptr},
                          {"metadata", metadata}};
    f << hdr.dump() << "\n";
    for (const auto& it : items) {
        nlohmann::json j = {{"id", it.id},
                            {"class", it.class_label},
                            {"cosine_audio", it.cosine_audio},
                            {"cosine_text", std::isfinite(it.cosine_text)
                                                ? nlohmann::json(it.cosine_text)
                                                : nlohmann::json()},
                            {"kl", it.kl},
                            {"visqol", nullptr}};
        f << j.dump() << "\n";
    }
}

void EvalReport::save_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write eval csv: " + path);
    f << "FD,KL,CLAP_audio,CLAP_text,ViSQOL\n";
    f << fd << "," << mean_kl << "," << mean_cosine_audio << ",";
    if (std::isfinite(mean_cosine_text)) f << mean_cosine_text;
    f << ",\n";  // ViSQOL reserved for external import
}

EvalReport evaluate(const DatasetManifest& manifest, const VelocityPredictor* model,
                    const NoiseSchedule* schedule, const CodecPlugin& codec,
                    const MelStatsEmbedder& embedder, const ClassifierPlugin* classifier,
                    const EvalOptions& options) {
    if (options.oracle == EvalOracle::None && (!model || !schedule))
        throw ConfigError("evaluation without an oracle needs a model and schedule");
    if (options.modality != "audio" && options.modality != "text")
        throw ConfigError("evaluation modality must be 'audio' or 'text'");

    std::vector<const DatasetItem*> rows;
    for (const auto& it : manifest.items)
        if (it.split == options.split) rows.push_back(&it);
    if (options.max_items > 0 && static_cast<int>(rows.size()) > options.max_items)
        rows.resize(static_cast<size_t>(options.max_items));

    EvalReport report;
    report.items.resize(rows.size());
    std::vector<char> ok(rows.size(), 0);
    std::vector<Eigen::VectorXd> feats_ref(rows.size()), feats_est(rows.size());

    if (!options.audio_out_dir.empty()) fs::create_directories(options.audio_out_dir);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
        const DatasetItem& row = *rows[static_cast<size_t>(i)];
        Wave gt, mixture;
        try {
            gt = read_wav(row.target_path);
            mixture = read_wav(row.mixture_path);
        } catch (const Error&) {
            continue;  // missing ground truth or mixture: skip and count
        }

        Wave extracted;
        switch (options.oracle) {
            case EvalOracle::GroundTruth:
                extracted = gt;
                break;
            case EvalOracle::Mixture:
                extracted = mixture;
                break;
            case EvalOracle::None: {
                ReferenceEmbedding ref;
                if (options.modality == "audio") {
                    ref = embed_audio_reference(read_wav(row.reference_path), embedder);
                } else {
                    ref = embed_text_reference(row.class_label, embedder);
                }
                SamplerConfig sc = options.sampler;
                sc.seed = derive_seed(options.sampler.seed, 0xee01ULL,
                                      train_item_key(row.id));
                LatentSequence xm = codec.encode(mixture);
                LatentSequence x0 = sample(*model, xm, ref, *schedule, sc);
                extracted = codec.decode(x0);
                extracted.samples.resize(mixture.samples.size());
                break;
            }
        }
        if (!options.audio_out_dir.empty())
            write_wav((fs::path(options.audio_out_dir) / (row.id + "_extracted.wav")).string(),
                      extracted, WavEncoding::Float32);

        EvalItemRecord rec;
        rec.id = row.id;
        rec.class_label = row.class_label;
        const ReferenceEmbedding e_est = embedder.embed_audio(extracted);
        const ReferenceEmbedding e_gt = embedder.embed_audio(gt);
        rec.cosine_audio = embedding_cosine(e_est.data, e_gt.data);
        auto cen = embedder.stats().class_centroids.find(row.class_label);
        rec.cosine_text = (cen != embedder.stats().class_centroids.end())
                              ? embedding_cosine(e_est.data, cen->second)
                              : std::numeric_limits<double>::quiet_NaN();
        if (classifier) {
            rec.kl = paired_kl(classifier->posterior(gt), classifier->posterior(extracted));
            feats_ref[static_cast<size_t>(i)] = classifier->feature(gt);
            feats_est[static_cast<size_t>(i)] = classifier->feature(extracted);
        }
        report.items[static_cast<size_t>(i)] = std::move(rec);
        ok[static_cast<size_t>(i)] = 1;
    }

    // Single-writer reduce: drop skipped slots, then aggregate.
    std::vector<EvalItemRecord> kept;
    Eigen::Index n_ok = 0;
    for (size_t i = 0; i < rows.size(); ++i) n_ok += ok[i] ? 1 : 0;
    Eigen::Index feat_dim = 0;
    for (size_t i = 0; i < rows.size(); ++i)
        if (ok[i] && classifier) {
            feat_dim = feats_ref[i].size();
            break;
        }
    Eigen::MatrixXd fr(n_ok, feat_dim), fe(n_ok, feat_dim);
    Eigen::Index k = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (!ok[i]) {
            ++report.skipped;
            continue;
        }
        kept.push_back(std::move(report.items[i]));
        if (classifier) {
            fr.row(k) = feats_ref[i].transpose();
            fe.row(k) = feats_est[i].transpose();
        }
        ++k;
    }
    report.items = std::move(kept);
    report.recompute_aggregates();
    report.fd = (classifier && n_ok >= 2) ? frechet_distance(fr, fe)
                                          : std::numeric_limits<double>::quiet_NaN();

    report.metadata["modality"] = options.modality;
    report.metadata["oracle"] = options.oracle == EvalOracle::None
                                    ? "none"
                                    : (options.oracle == EvalOracle::Mixture ? "mixture"
                                                                             : "ground-truth");
    report.metadata["steps"] = options.sampler.steps;
    report.metadata["guidance_scale"] = options.sampler.guidance_scale;
    report.metadata["seed"] = options.sampler.seed;
    report.metadata["split"] = options.split;
    return report;
}

}  // namespace tse
