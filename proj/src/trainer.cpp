#include "tse/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

namespace fs = std::filesystem;

namespace tse {

uint64_t train_item_key(const std::string& id) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename S>
std::vector<TrainItem<S>> load_training_items(const DatasetManifest& manifest,
                                              const std::string& split,
                                              const TrainPlugins& plugins) {
    if (!plugins.codec || !plugins.embedder)
        throw ConfigError("training requires codec and embedder plugins");
    if (!plugins.embedder->can_embed_audio())
        throw CapabilityError("embedder cannot produce audio reference embeddings");

    std::vector<const DatasetItem*> rows;
    for (const auto& it : manifest.items)
        if (it.split == split) rows.push_back(&it);

    // Distinct reference assets embedded once.
    std::vector<std::string> ref_paths;
    for (const auto* r : rows) ref_paths.push_back(r->reference_path);
    std::sort(ref_paths.begin(), ref_paths.end());
    ref_paths.erase(std::unique(ref_paths.begin(), ref_paths.end()), ref_paths.end());
    std::map<std::string, Eigen::VectorXd> ref_cache;
    for (const auto& p : ref_paths) ref_cache[p];  // fixed layout before parallel fill
    {
        std::vector<const std::string*> keys;
        for (auto& [k, v] : ref_cache) keys.push_back(&k);
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < static_cast<int>(keys.size()); ++i) {
            Wave w = read_wav(*keys[static_cast<size_t>(i)]);
            ReferenceEmbedding e = embed_audio_reference(w, *plugins.embedder);
            ref_cache[*keys[static_cast<size_t>(i)]] = e.data;
        }
    }

    std::vector<TrainItem<S>> items(rows.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
        const DatasetItem& r = *rows[static_cast<size_t>(i)];
        TrainItem<S>& it = items[static_cast<size_t>(i)];
        it.id = r.id;
        it.class_label = r.class_label;
        it.x0 = plugins.codec->encode(read_wav(r.target_path))
                    .data.template cast<S>();
        it.xm = plugins.codec->encode(read_wav(r.mixture_path))
                    .data.template cast<S>();
        it.ref_audio = ref_cache.at(r.reference_path);
        if (plugins.stats) {
            auto c = plugins.stats->class_centroids.find(r.class_label);
            if (c != plugins.stats->class_centroids.end()) it.ref_text = c->second;
        }
    }
    return items;
}

template std::vector<TrainItem<float>> load_training_items(const DatasetManifest&,
                                                           const std::string&,
                                                           const TrainPlugins&);
template std::vector<TrainItem<double>> load_training_items(const DatasetManifest&,
                                                            const std::string&,
                                                            const TrainPlugins&);

namespace {

template <typename S>
Checkpoint train_impl(const TrainRunConfig& run, const DatasetManifest& manifest,
                      const TrainPlugins& plugins, const Checkpoint* warm_start) {
    const TrainConfig& cfg = run.train;
    cfg.validate();
    run.model.validate();
    if (!run.schedule.rescaled())
        throw ConfigError("training requires a terminal-rescaled schedule");

    auto train_items = load_training_items<S>(manifest, "train", plugins);
    auto valid_items = load_training_items<S>(manifest, "valid", plugins);
    if (train_items.empty()) throw ParameterError("training manifest has no train items");

    fs::create_directories(run.out_dir);
    std::ofstream log_file(fs::path(run.out_dir) / "train_log.jsonl", std::ios::app);
    auto log = [&](const nlohmann::json& j) {
        const std::string line = j.dump();
        log_file << line << "\n";
        log_file.flush();
        if (run.log_line) run.log_line(line);
    };

#ifdef _OPENMP
    const int threads = omp_get_max_threads();
#else
    const int threads = 1;
#endif

    DitModel<S> model(run.model);
    AdamW<S> adam(run.model);
    int64_t start_epoch = 0, global_step = 0;
    if (warm_start) {
        if (!(backbone_config_to_json(warm_start->config) == backbone_config_to_json(run.model)))
            throw ConfigError("checkpoint model config does not match run config");
        cast_params(warm_start->params, model.params());
        if (warm_start->has_optimizer) {
            cast_params(warm_start->adam_m, adam.m);
            cast_params(warm_start->adam_v, adam.v);
            adam.step = warm_start->adam_step;
        }
        start_epoch = warm_start->epoch;
        global_step = warm_start->global_step;
    } else {
        model.init_weights(derive_seed(cfg.seed, 0x1417ULL));
    }

    DitTrainAdapter<S> adapter(model, threads);
    DitParams<S> grads = make_params<S>(run.model);

    auto make_checkpoint = [&](int64_t epoch, double val_loss) {
        Checkpoint ck;
        ck.config = run.model;
        ck.params = make_params<double>(run.model);
        cast_params(model.params(), ck.params);
        ck.has_optimizer = true;
        ck.adam_m = make_params<double>(run.model);
        ck.adam_v = make_params<double>(run.model);
        cast_params(adam.m, ck.adam_m);
        cast_params(adam.v, ck.adam_v);
        ck.adam_step = adam.step;
        ck.epoch = epoch;
        ck.global_step = global_step;
        ck.schedule_json = run.schedule.to_json();
        ck.metadata = run.metadata;
        ck.metadata["seed"] = cfg.seed;
        ck.metadata["precision"] = run.precision;
        ck.metadata["val_loss"] = val_loss;
        return ck;
    };

    // Validation uses fixed per-item draws (reserved step key) and the
    // conditional audio-reference path only.
    auto validation_loss = [&]() -> double {
        if (valid_items.empty()) return std::numeric_limits<double>::quiet_NaN();
        double acc = 0.0;
        size_t count = 0;
        std::vector<const TrainItem<S>*> batch;
        for (size_t i = 0; i < valid_items.size(); i += static_cast<size_t>(cfg.batch_size)) {
            batch.clear();
            for (size_t k = i; k < std::min(valid_items.size(), i + static_cast<size_t>(cfg.batch_size)); ++k)
                batch.push_back(&valid_items[k]);
            const double l = training_step(adapter, batch, run.schedule, cfg.seed,
                                           /*step_key=*/-1, /*uncond=*/0.0,
                                           /*text_frac=*/0.0, /*with_grads=*/false);
            acc += l * static_cast<double>(batch.size());
            count += batch.size();
        }
        return acc / static_cast<double>(count);
    };

    double best_val = std::numeric_limits<double>::infinity();
    const std::string best_path = (fs::path(run.out_dir) / "ckpt_best.bin").string();
    const std::string last_path = (fs::path(run.out_dir) / "ckpt_last.bin").string();

    std::vector<size_t> order(train_items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    Checkpoint last;
    if (start_epoch >= cfg.epochs) {
        last = make_checkpoint(start_epoch, validation_loss());
        last.save(last_path);
    }
    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x0e0eULL, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        double epoch_loss = 0.0;
        int64_t epoch_batches = 0;
        for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const TrainItem<S>*> batch;
            for (size_t k = i; k < std::min(order.size(), i + static_cast<size_t>(cfg.batch_size)); ++k)
                batch.push_back(&train_items[order[k]]);

            adapter.zero_grads();
            const double loss =
                training_step(adapter, batch, run.schedule, cfg.seed, global_step,
                              cfg.uncond_fraction, cfg.text_ref_fraction, /*with_grads=*/true);
            adapter.reduce_into(grads);
            clip_grads(grads, cfg.grad_clip);
            adam.update(model.params(), grads, cfg.lr, cfg.weight_decay);

            log({{"epoch", epoch}, {"step", global_step}, {"loss", loss}, {"lr", cfg.lr}});
            epoch_loss += loss;
            ++epoch_batches;
            ++global_step;
        }

        const double val = validation_loss();
        log({{"type", "val"},
             {"epoch", epoch},
             {"train_loss", epoch_loss / std::max<int64_t>(epoch_batches, 1)},
             {"val_loss", val}});

        last = make_checkpoint(epoch + 1, val);
        last.save(last_path);
        if (!std::isnan(val) && val < best_val) {
            best_val = val;
            last.save(best_path);
        }
    }
    if (valid_items.empty()) last.save(best_path);  // best == last without validation
    last.metadata["best_val_loss"] = best_val;
    return last;
}

}  // namespace

Checkpoint train(const TrainRunConfig& run, const DatasetManifest& manifest,
                 const TrainPlugins& plugins) {
    std::optional<Checkpoint> warm;
    if (!run.resume_checkpoint.empty()) warm = Checkpoint::load(run.resume_checkpoint);
    if (run.precision == "f32")
        return train_impl<float>(run, manifest, plugins, warm ? &*warm : nullptr);
    if (run.precision == "f64")
        return train_impl<double>(run, manifest, plugins, warm ? &*warm : nullptr);
    throw ConfigError("unsupported training precision: " + run.precision);
}

Checkpoint finetune(const Checkpoint& base, const DatasetManifest& small_manifest,
                    const TrainPlugins& plugins, TrainRunConfig run) {
    bool any_train = false;
    for (const auto& it : small_manifest.items) any_train |= (it.split == "train");
    if (!any_train)
        throw ParameterError("few-shot manifest has no training items (k = 0)");
    if (!plugins.embedder || !plugins.embedder->can_embed_audio())
        throw CapabilityError("few-shot class lacks reference embedding support");

    run.model = base.config;
    if (base.schedule_json.empty())
        throw ConfigError("base checkpoint carries no schedule; cannot fine-tune");
    run.schedule = NoiseSchedule::from_json(base.schedule_json);

    Checkpoint warm = base;
    warm.epoch = 0;       // fine-tuning counts its own epochs
    warm.global_step = 0; // and its own data order
    if (run.precision == "f32")
        return train_impl<float>(run, small_manifest, plugins, &warm);
    if (run.precision == "f64")
        return train_impl<double>(run, small_manifest, plugins, &warm);
    throw ConfigError("unsupported training precision: " + run.precision);
}

}  // namespace tse
