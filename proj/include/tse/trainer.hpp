#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tse/backbone.hpp"
#include "tse/checkpoint.hpp"
#include "tse/codec.hpp"
#include "tse/error.hpp"
#include "tse/mixture.hpp"
#include "tse/rng.hpp"
#include "tse/schedule.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tse {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int batch_size = 128;
    int epochs = 100;
    double uncond_fraction = 0.10;
    double grad_clip = 1.0;
    // Fraction of conditioned items that use the class-text reference
    // instead of the reference-audio embedding (when available).
    double text_ref_fraction = 0.5;
    std::string optimizer = "adamw";  // decoupled weight decay
    uint64_t seed = 0;

    // Few-shot fine-tuning recipe.
    static TrainConfig few_shot_defaults() {
        TrainConfig c;
        c.lr = 1e-5;
        c.weight_decay = 1e-4;
        c.batch_size = 32;
        c.epochs = 20;
        return c;
    }

    void validate() const {
        if (!(lr > 0.0) || batch_size < 1 || epochs < 1)
            throw ConfigError("train config needs positive lr/batch/epochs");
        if (uncond_fraction < 0.0 || uncond_fraction > 1.0)
            throw ConfigError("uncond_fraction must lie in [0, 1]");
        if (text_ref_fraction < 0.0 || text_ref_fraction > 1.0)
            throw ConfigError("text_ref_fraction must lie in [0, 1]");
        if (optimizer != "adamw") throw ConfigError("unsupported optimizer: " + optimizer);
    }
};

// One cached training example: latents and reference embeddings.
template <typename S>
struct TrainItem {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    std::string id;
    std::string class_label;
    Mat x0;  // target latent [N, C]
    Mat xm;  // mixture latent [N, C]
    Eigen::VectorXd ref_audio;               // always present
    std::optional<Eigen::VectorXd> ref_text;  // class centroid when known
};

uint64_t train_item_key(const std::string& id);

// AdamW with decoupled weight decay over matching param structures.
template <typename S>
struct AdamW {
    DitParams<S> m, v;
    int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamW(const BackboneConfig& cfg) {
        m = make_params<S>(cfg);
        v = make_params<S>(cfg);
    }

    void update(DitParams<S>& p, DitParams<S>& g, double lr, double weight_decay) {
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        auto tp = collect_tensors(p), tg = collect_tensors(g), tm = collect_tensors(m),
             tv = collect_tensors(v);
        for (size_t i = 0; i < tp.size(); ++i) {
            S* pp = tp[i].data;
            S* pg = tg[i].data;
            S* pm = tm[i].data;
            S* pv = tv[i].data;
            const Eigen::Index n = tp[i].size();
            for (Eigen::Index k = 0; k < n; ++k) {
                pm[k] = static_cast<S>(beta1 * pm[k] + (1.0 - beta1) * pg[k]);
                pv[k] = static_cast<S>(beta2 * pv[k] + (1.0 - beta2) * pg[k] * pg[k]);
                const double mhat = pm[k] / bc1;
                const double vhat = pv[k] / bc2;
                pp[k] = static_cast<S>(pp[k] - lr * (mhat / (std::sqrt(vhat) + eps) +
                                                     weight_decay * pp[k]));
            }
        }
    }
};

template <typename S>
double grad_global_norm(DitParams<S>& g) {
    double acc = 0.0;
    for (auto& t : collect_tensors(g))
        for (Eigen::Index k = 0; k < t.size(); ++k) acc += static_cast<double>(t.data[k]) * t.data[k];
    return std::sqrt(acc);
}

template <typename S>
void clip_grads(DitParams<S>& g, double max_norm) {
    const double n = grad_global_norm(g);
    if (n > max_norm && n > 0.0) {
        const S s = static_cast<S>(max_norm / n);
        for (auto& t : collect_tensors(g))
            for (Eigen::Index k = 0; k < t.size(); ++k) t.data[k] *= s;
    }
}

// Per-item draws for one training step, keyed by (seed, step, item id) so
// loss is invariant under batch permutation.
struct ItemDraws {
    int t;
    bool uncond;
    bool use_text_ref;
};

inline ItemDraws draw_item_plan(uint64_t seed, int64_t step_key, uint64_t item_key, int T,
                                double uncond_fraction, double text_ref_fraction, Rng& noise_rng) {
    Rng rng(derive_seed(seed, 0x57e9ULL, static_cast<uint64_t>(step_key), item_key));
    ItemDraws d;
    d.t = static_cast<int>(rng.uniform_int(1, T));
    d.uncond = rng.uniform() < uncond_fraction;
    d.use_text_ref = rng.uniform() < text_ref_fraction;
    noise_rng.reseed(derive_seed(seed, 0xe151ULL, static_cast<uint64_t>(step_key), item_key));
    return d;
}

// Model adapter concept for training_step:
//   using Scalar; using Cache;
//   Mat forward_item(x_t, x_m, ref512 (double), is_null, t, Cache&, int tid)
//   void backward_item(Cache&, d_v, int tid)
// Stub adapters in tests implement the same surface.
template <typename S>
struct DitTrainAdapter {
    using Scalar = S;
    using Cache = typename DitModel<S>::Cache;
    using Mat = typename DitModel<S>::Mat;

    DitModel<S>* model;
    std::vector<DitParams<S>> thread_grads;

    DitTrainAdapter(DitModel<S>& m, int threads) : model(&m) {
        thread_grads.reserve(static_cast<size_t>(threads));
        for (int i = 0; i < threads; ++i) thread_grads.push_back(make_params<S>(m.config()));
    }

    void zero_grads() {
        for (auto& g : thread_grads) g.setZero();
    }

    // Deterministic reduction: thread buffers summed in index order.
    void reduce_into(DitParams<S>& total) {
        total.setZero();
        auto tt = collect_tensors(total);
        for (auto& g : thread_grads) {
            auto tg = collect_tensors(g);
            for (size_t i = 0; i < tt.size(); ++i)
                for (Eigen::Index k = 0; k < tt[i].size(); ++k) tt[i].data[k] += tg[i].data[k];
        }
    }

    Mat forward_item(const Mat& x_t, const Mat& x_m, const Eigen::VectorXd& ref, bool is_null,
                     int t, Cache& cache, int) const {
        typename DitModel<S>::Vec r =
            is_null ? model->params().null_ref : ref.template cast<S>().eval();
        return model->forward(x_t, x_m, r, is_null, t, cache);
    }

    void backward_item(Cache& cache, const Mat& d_v, int tid) {
        model->backward(cache, d_v, thread_grads[static_cast<size_t>(tid)]);
    }
};

// One optimization step's loss (and gradients when with_grads). Samples
// (t, eps) per item, forms x_t and the velocity target, replaces the
// reference with the null embedding with probability uncond_fraction, and
// returns the batch-mean velocity MSE.
template <typename Adapter>
double training_step(Adapter& adapter,
                     const std::vector<const TrainItem<typename Adapter::Scalar>*>& batch,
                     const NoiseSchedule& sched, uint64_t seed, int64_t step_key,
                     double uncond_fraction, double text_ref_fraction, bool with_grads,
                     std::vector<ItemDraws>* draws_out = nullptr) {
    using S = typename Adapter::Scalar;
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    if (batch.empty()) throw ParameterError("training step needs a non-empty batch");
    const int B = static_cast<int>(batch.size());
    std::vector<double> losses(static_cast<size_t>(B), 0.0);
    if (draws_out) draws_out->assign(static_cast<size_t>(B), ItemDraws{});

#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < B; ++bi) {
        const auto& item = *batch[static_cast<size_t>(bi)];
#ifdef _OPENMP
        const int tid = omp_get_thread_num();
#else
        const int tid = 0;
#endif
        Rng noise_rng;
        const ItemDraws d =
            draw_item_plan(seed, step_key, train_item_key(item.id), sched.T(), uncond_fraction,
                           text_ref_fraction, noise_rng);
        if (draws_out) (*draws_out)[static_cast<size_t>(bi)] = d;

        const Eigen::Index n = item.x0.rows(), c = item.x0.cols();
        Mat eps(n, c);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < c; ++j) eps(i, j) = static_cast<S>(noise_rng.normal());

        const S a = static_cast<S>(sched.sqrt_alpha_bar(d.t));
        const S b = static_cast<S>(sched.sqrt_one_minus_alpha_bar(d.t));
        Mat x_t = a * item.x0 + b * eps;
        Mat v_tgt = a * eps - b * item.x0;

        const Eigen::VectorXd& ref = (d.use_text_ref && item.ref_text) ? *item.ref_text
                                                                       : item.ref_audio;
        typename Adapter::Cache cache;
        Mat v_pred = adapter.forward_item(x_t, item.xm, ref, d.uncond, d.t, cache, tid);
        Mat diff = v_pred - v_tgt;
        const double denom = static_cast<double>(n) * static_cast<double>(c);
        losses[static_cast<size_t>(bi)] = static_cast<double>(diff.squaredNorm()) / denom;

        if (with_grads) {
            Mat d_v = diff * static_cast<S>(2.0 / (denom * B));
            adapter.backward_item(cache, d_v, tid);
        }
    }

    double loss = 0.0;
    for (int bi = 0; bi < B; ++bi) loss += losses[static_cast<size_t>(bi)];
    loss /= B;
    if (!std::isfinite(loss)) {
        std::string diag = "non-finite training loss;";
        for (int bi = 0; bi < B; ++bi)
            if (!std::isfinite(losses[static_cast<size_t>(bi)]))
                diag += " item=" + batch[static_cast<size_t>(bi)]->id +
                        " x0_norm=" + std::to_string(batch[static_cast<size_t>(bi)]->x0.norm());
        throw NumericError(diag);
    }
    return loss;
}

struct TrainPlugins {
    const CodecPlugin* codec = nullptr;
    const EmbedderPlugin* embedder = nullptr;
    const EmbedderStats* stats = nullptr;  // for class-centroid text refs
};

// Encodes and embeds every manifest item of `split` into memory.
template <typename S>
std::vector<TrainItem<S>> load_training_items(const DatasetManifest& manifest,
                                              const std::string& split,
                                              const TrainPlugins& plugins);

struct TrainRunConfig {
    TrainConfig train;
    BackboneConfig model;
    NoiseSchedule schedule;  // rescaled
    std::string out_dir;
    std::string resume_checkpoint;  // optional
    std::string precision = "f32";  // f32 | f64
    nlohmann::json metadata;        // recorded into checkpoints
    std::function<void(const std::string&)> log_line;  // optional sink
};

// Full optimization: seeded shuffles, AdamW with gradient clipping,
// per-epoch conditional validation, best/last checkpoints on disk.
Checkpoint train(const TrainRunConfig& run, const DatasetManifest& manifest,
                 const TrainPlugins& plugins);

// Continues optimization from a checkpoint under the few-shot recipe
// (callers override fields via `overrides` before the run).
Checkpoint finetune(const Checkpoint& base, const DatasetManifest& small_manifest,
                    const TrainPlugins& plugins, TrainRunConfig run);

}  // namespace tse
