// tse: target sound extraction toolkit CLI.
// Commands: synth-data, train, finetune, extract, evaluate.
// Exit codes: 0 success, 1 file/runtime error, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"

#include "tse/checkpoint.hpp"
#include "tse/classifier.hpp"
#include "tse/codec.hpp"
#include "tse/config.hpp"
#include "tse/diffusion.hpp"
#include "tse/embedding.hpp"
#include "tse/error.hpp"
#include "tse/eval.hpp"
#include "tse/mixture.hpp"
#include "tse/toy.hpp"
#include "tse/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    int64_t seed = -1;  // <0: keep config value
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* c = cmd->add_option("--config", args.config_path, "JSON config file");
    if (config_required) c->required();
    cmd->add_option("--set", args.overrides, "Override config values (dotted.key=value)");
    cmd->add_option("--seed", args.seed, "Master seed (overrides the config seed)");
}

// file < --set overrides < explicit --seed flag.
json resolve_config(const json& defaults, const CommonArgs& args) {
    json cfg = defaults;
    if (!args.config_path.empty())
        cfg = tse::merge_config(defaults, tse::load_json_file(args.config_path));
    for (const auto& ov : args.overrides) tse::apply_override(cfg, ov);
    if (args.seed >= 0) cfg["seed"] = static_cast<uint64_t>(args.seed);
    return cfg;
}

void log_resolved(const json& cfg, const std::string& out_dir) {
    std::cout << "resolved config:\n" << cfg.dump(2) << "\n";
    tse::write_resolved_config(cfg, out_dir);
}

json synth_defaults() {
    return json{
        {"seed", 0},
        {"corpus",
         {{"root", ""}, {"class_map", ""}, {"out_dir", ""}, {"background_class", "background"}}},
        {"splits", {{"train", 0.8}, {"valid", 0.1}, {"test", 0.1}}},
        {"ingest", {{"min_duration_s", 0.3}, {"max_duration_s", 30.0}}},
        {"mixture",
         {{"duration_s", 10.0},
          {"mixtures_per_file", 3},
          {"interferer_snr_db", json::array({-10.0, 10.0})},
          {"background_snr_db", json::array({-5.0, 10.0})}}},
        {"out", {{"dataset_dir", ""}}}};
}

int run_synth_data(const CommonArgs& args) {
    json cfg = resolve_config(synth_defaults(), args);
    const std::string dataset_dir = cfg["out"]["dataset_dir"].get<std::string>();
    if (dataset_dir.empty()) throw tse::ConfigError("out.dataset_dir must be set");
    log_resolved(cfg, dataset_dir);

    tse::IngestConfig icfg;
    icfg.min_duration_s = cfg["ingest"]["min_duration_s"].get<double>();
    icfg.max_duration_s = cfg["ingest"]["max_duration_s"].get<double>();
    icfg.train_frac = cfg["splits"]["train"].get<double>();
    icfg.valid_frac = cfg["splits"]["valid"].get<double>();
    icfg.split_seed = cfg["seed"].get<uint64_t>();

    std::string corpus_out = cfg["corpus"]["out_dir"].get<std::string>();
    if (corpus_out.empty()) corpus_out = (fs::path(dataset_dir) / "corpus_24k").string();
    tse::CorpusManifest corpus = tse::ingest_corpus(cfg["corpus"]["root"].get<std::string>(),
                                                    cfg["corpus"]["class_map"].get<std::string>(),
                                                    corpus_out, icfg);
    corpus.save((fs::path(dataset_dir) / "corpus_manifest.jsonl").string());
    std::cout << "ingested " << corpus.entries.size() << " assets (" << corpus.skipped_files
              << " skipped)\n";

    tse::DatasetBuildConfig bcfg;
    bcfg.duration_s = cfg["mixture"]["duration_s"].get<double>();
    bcfg.mixtures_per_file = cfg["mixture"]["mixtures_per_file"].get<int>();
    bcfg.interferer_snr_lo = cfg["mixture"]["interferer_snr_db"][0].get<double>();
    bcfg.interferer_snr_hi = cfg["mixture"]["interferer_snr_db"][1].get<double>();
    bcfg.background_snr_lo = cfg["mixture"]["background_snr_db"][0].get<double>();
    bcfg.background_snr_hi = cfg["mixture"]["background_snr_db"][1].get<double>();
    bcfg.background_class = cfg["corpus"]["background_class"].get<std::string>();

    tse::DatasetManifest manifest =
        tse::build_dataset(bcfg, corpus, cfg["seed"].get<uint64_t>(), dataset_dir);
    manifest.save((fs::path(dataset_dir) / "manifest.jsonl").string());
    for (const auto& [split, n] : manifest.counts_per_split())
        std::cout << "  " << split << ": " << n << " mixtures\n";

    // Fit the desk-scale embedder and the metric classifier on the train
    // split; both are persisted alongside the manifest.
    std::vector<tse::Wave> waves;
    std::vector<std::pair<const tse::Wave*, std::string>> fit_set;
    std::vector<const tse::CorpusEntry*> train_events;
    for (const auto& e : corpus.entries)
        if (e.split == "train") train_events.push_back(&e);
    waves.reserve(train_events.size());
    for (const auto* e : train_events) waves.push_back(tse::read_wav(e->path));
    for (size_t i = 0; i < waves.size(); ++i)
        fit_set.emplace_back(&waves[i], train_events[i]->class_label);
    tse::EmbedderStats stats = tse::MelStatsEmbedder::fit(fit_set);
    stats.save((fs::path(dataset_dir) / "embedder_stats.json").string());

    auto embedder = std::make_shared<tse::MelStatsEmbedder>(stats);
    std::vector<std::string> labels;
    for (const auto& [label, c] : stats.class_centroids)
        if (label != bcfg.background_class) labels.push_back(label);
    std::vector<int> label_ids;
    std::vector<Eigen::VectorXd> embs;
    for (size_t i = 0; i < waves.size(); ++i) {
        const std::string& cls = train_events[i]->class_label;
        auto it = std::find(labels.begin(), labels.end(), cls);
        if (it == labels.end()) continue;  // background is not a classifier target
        label_ids.push_back(static_cast<int>(it - labels.begin()));
        embs.push_back(embedder->embed_audio(waves[i]).data);
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(embs.size()), tse::kEmbeddingDim);
    for (size_t i = 0; i < embs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = embs[i];
    tse::SoftmaxClassifier clf = tse::SoftmaxClassifier::fit(embedder, x, label_ids, labels);
    clf.save((fs::path(dataset_dir) / "classifier.json").string());

    std::cout << "dataset written to " << dataset_dir << "\n";
    return 0;
}

json train_defaults(bool few_shot) {
    json t = {{"lr", few_shot ? 1e-5 : 1e-4},
              {"weight_decay", 1e-4},
              {"batch_size", few_shot ? 32 : 128},
              {"epochs", few_shot ? 20 : 100},
              {"uncond_fraction", 0.1},
              {"grad_clip", 1.0},
              {"text_ref_fraction", 0.5},
              {"precision", "f32"},
              {"resume", ""}};
    json j = {{"seed", 0},
              {"data", {{"manifest", ""}, {"embedder_stats", ""}}},
              {"model",
               {{"depth", 12},
                {"width", 768},
                {"heads", 12},
                {"latent_channels", 128},
                {"rope_base", 10000.0},
                {"mlp_ratio", 4},
                {"use_skips", true}}},
              {"schedule", {{"T", 1000}, {"beta_start", 0.00085}, {"beta_end", 0.012}}},
              {"train", t},
              {"out", {{"dir", ""}}}};
    if (few_shot) j["checkpoint"] = "";
    return j;
}

tse::TrainRunConfig run_from_config(const json& cfg, const char* command) {
    tse::TrainRunConfig run;
    run.model = tse::backbone_config_from_json(cfg["model"]);
    run.schedule = tse::NoiseSchedule::build(cfg["schedule"]["T"].get<int>(),
                                             cfg["schedule"]["beta_start"].get<double>(),
                                             cfg["schedule"]["beta_end"].get<double>())
                       .rescaled_terminal();
    const auto& t = cfg["train"];
    run.train.lr = t["lr"].get<double>();
    run.train.weight_decay = t["weight_decay"].get<double>();
    run.train.batch_size = t["batch_size"].get<int>();
    run.train.epochs = t["epochs"].get<int>();
    run.train.uncond_fraction = t["uncond_fraction"].get<double>();
    run.train.grad_clip = t["grad_clip"].get<double>();
    run.train.text_ref_fraction = t["text_ref_fraction"].get<double>();
    run.train.seed = cfg["seed"].get<uint64_t>();
    run.precision = t["precision"].get<std::string>();
    run.resume_checkpoint = t["resume"].get<std::string>();
    run.out_dir = cfg["out"]["dir"].get<std::string>();
    if (run.out_dir.empty()) throw tse::ConfigError("out.dir must be set");
    run.metadata = {{"command", command},
                    {"manifest", cfg["data"]["manifest"].get<std::string>()},
                    {"embedder_stats", cfg["data"]["embedder_stats"].get<std::string>()}};
    run.log_line = [](const std::string& line) { std::cout << line << "\n"; };
    return run;
}

int run_train(const CommonArgs& args, bool few_shot) {
    json cfg = resolve_config(train_defaults(few_shot), args);
    tse::TrainRunConfig run = run_from_config(cfg, few_shot ? "finetune" : "train");
    log_resolved(cfg, run.out_dir);

    tse::DatasetManifest manifest =
        tse::DatasetManifest::load(cfg["data"]["manifest"].get<std::string>());
    tse::EmbedderStats stats =
        tse::EmbedderStats::load(cfg["data"]["embedder_stats"].get<std::string>());
    tse::MelStatsEmbedder embedder(stats);
    tse::SubbandCodec codec;
    tse::TrainPlugins plugins{&codec, &embedder, &stats};

    tse::Checkpoint ck;
    if (few_shot) {
        const std::string base_path = cfg["checkpoint"].get<std::string>();
        if (base_path.empty()) throw tse::ConfigError("finetune requires a base checkpoint");
        tse::Checkpoint base = tse::Checkpoint::load(base_path);
        ck = tse::finetune(base, manifest, plugins, run);
    } else {
        ck = tse::train(run, manifest, plugins);
    }
    std::cout << "training finished: epoch=" << ck.epoch << " step=" << ck.global_step
              << " val_loss=" << ck.metadata.value("val_loss", 0.0) << "\n"
              << "checkpoints in " << run.out_dir << "\n";
    return 0;
}

json evaluate_defaults() {
    return json{{"seed", 0},
                {"data", {{"manifest", ""}, {"embedder_stats", ""}, {"classifier", ""}}},
                {"checkpoint", ""},
                {"sampler", {{"steps", 50}, {"gamma", -1.0}, {"seed", 0}}},
                {"modality", "audio"},
                {"oracle", "none"},
                {"split", "test"},
                {"max_items", 0},
                {"out", {{"report", ""}, {"csv", ""}, {"audio_dir", ""}}}};
}

int run_evaluate(const CommonArgs& args) {
    json cfg = resolve_config(evaluate_defaults(), args);
    const std::string report_path = cfg["out"]["report"].get<std::string>();
    if (report_path.empty()) throw tse::ConfigError("out.report must be set");
    log_resolved(cfg, fs::path(report_path).parent_path().string());

    tse::DatasetManifest manifest =
        tse::DatasetManifest::load(cfg["data"]["manifest"].get<std::string>());
    tse::EmbedderStats stats =
        tse::EmbedderStats::load(cfg["data"]["embedder_stats"].get<std::string>());
    auto embedder = std::make_shared<tse::MelStatsEmbedder>(stats);

    std::unique_ptr<tse::SoftmaxClassifier> classifier;
    if (!cfg["data"]["classifier"].get<std::string>().empty())
        classifier = std::make_unique<tse::SoftmaxClassifier>(
            tse::SoftmaxClassifier::load(cfg["data"]["classifier"].get<std::string>(), embedder));

    tse::EvalOptions opt;
    opt.modality = cfg["modality"].get<std::string>();
    const std::string oracle = cfg["oracle"].get<std::string>();
    opt.oracle = oracle == "none"          ? tse::EvalOracle::None
                 : oracle == "mixture"     ? tse::EvalOracle::Mixture
                 : oracle == "ground-truth"
                     ? tse::EvalOracle::GroundTruth
                     : throw tse::ConfigError("oracle must be none|mixture|ground-truth");
    opt.split = cfg["split"].get<std::string>();
    opt.max_items = cfg["max_items"].get<int>();
    opt.audio_out_dir = cfg["out"]["audio_dir"].get<std::string>();
    opt.sampler.steps = cfg["sampler"]["steps"].get<int>();
    opt.sampler.seed = cfg["sampler"]["seed"].get<uint64_t>();
    const double gamma = cfg["sampler"]["gamma"].get<double>();
    opt.sampler.guidance_scale = gamma >= 0.0 ? gamma : (opt.modality == "audio" ? 2.5 : 3.0);

    std::unique_ptr<tse::DitModel<float>> model;
    tse::NoiseSchedule schedule;
    if (opt.oracle == tse::EvalOracle::None) {
        tse::Checkpoint ck = tse::Checkpoint::load(cfg["checkpoint"].get<std::string>());
        model = std::make_unique<tse::DitModel<float>>(ck.config);
        tse::cast_params(ck.params, model->params());
        if (ck.schedule_json.empty())
            throw tse::ConfigError("checkpoint carries no schedule table");
        schedule = tse::NoiseSchedule::from_json(ck.schedule_json);
    }

    tse::SubbandCodec codec;
    tse::EvalReport report = tse::evaluate(manifest, model.get(), model ? &schedule : nullptr,
                                           codec, *embedder, classifier.get(), opt);
    report.metadata["checkpoint"] = cfg["checkpoint"];
    report.metadata["manifest"] = cfg["data"]["manifest"];
    report.save_jsonl(report_path);
    if (!cfg["out"]["csv"].get<std::string>().empty())
        report.save_csv(cfg["out"]["csv"].get<std::string>());

    std::printf("items=%zu skipped=%d\n", report.items.size(), report.skipped);
    std::printf("FD=%.4f  KL=%.4f  cosine_audio=%.4f  cosine_text=%.4f\n", report.fd,
                report.mean_kl, report.mean_cosine_audio, report.mean_cosine_text);
    return 0;
}

struct ExtractArgs {
    std::string mixture, ref_audio, ref_text, checkpoint, out, embedder_stats;
    double gamma = -1.0;
    int steps = 50;
    uint64_t seed = 0;
};

int run_extract(const ExtractArgs& a) {
    if (a.ref_audio.empty() == a.ref_text.empty()) {
        std::cerr << "extract requires exactly one of --ref-audio or --ref-text\n";
        return 2;
    }
    tse::Checkpoint ck = tse::Checkpoint::load(a.checkpoint);
    tse::DitModel<double> model(ck.config);
    model.params() = ck.params;
    if (ck.schedule_json.empty()) throw tse::ConfigError("checkpoint carries no schedule table");
    tse::NoiseSchedule schedule = tse::NoiseSchedule::from_json(ck.schedule_json);

    std::string stats_path = a.embedder_stats;
    if (stats_path.empty()) stats_path = ck.metadata.value("embedder_stats", "");
    if (stats_path.empty())
        throw tse::ConfigError("no embedder stats path (use --embedder-stats)");
    tse::MelStatsEmbedder embedder(tse::EmbedderStats::load(stats_path));

    tse::Wave mixture = tse::read_wav(a.mixture);
    tse::SubbandCodec codec;
    tse::LatentSequence xm = codec.encode(mixture);

    tse::ReferenceEmbedding ref;
    const bool audio_ref = !a.ref_audio.empty();
    if (audio_ref)
        ref = tse::embed_audio_reference(tse::read_wav(a.ref_audio), embedder);
    else
        ref = tse::embed_text_reference(a.ref_text, embedder);

    tse::SamplerConfig sc;
    sc.steps = a.steps;
    sc.guidance_scale = a.gamma >= 0.0 ? a.gamma : (audio_ref ? 2.5 : 3.0);
    sc.seed = a.seed;

    tse::LatentSequence x0 = tse::sample(model, xm, ref, schedule, sc);
    tse::Wave out = codec.decode(x0);
    out.samples.resize(mixture.samples.size());
    tse::write_wav(a.out, out, tse::WavEncoding::Float32);

    json sidecar = {{"command", "extract"},
                    {"mixture", a.mixture},
                    {"ref_audio", a.ref_audio},
                    {"ref_text", a.ref_text},
                    {"gamma", sc.guidance_scale},
                    {"steps", sc.steps},
                    {"seed", sc.seed},
                    {"checkpoint", a.checkpoint},
                    {"embedder_stats", stats_path},
                    {"output", a.out},
                    {"model", tse::backbone_config_to_json(ck.config)},
                    {"schedule", {{"T", schedule.T()}, {"rescaled", schedule.rescaled()}}}};
    std::ofstream sf(a.out + ".json");
    sf << sidecar.dump(2) << "\n";
    std::cout << "extracted -> " << a.out << " (gamma=" << sc.guidance_scale
              << ", steps=" << sc.steps << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Target sound extraction with a latent-diffusion transformer"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, finetune_args, eval_args;
    ExtractArgs extract_args;

    auto* synth = app.add_subcommand("synth-data", "Simulate SNR-controlled mixtures from a corpus");
    add_common(synth, synth_args);

    auto* train_cmd = app.add_subcommand("train", "Train the extraction model");
    add_common(train_cmd, train_args);

    auto* finetune_cmd = app.add_subcommand("finetune", "Few-shot fine-tune from a checkpoint");
    add_common(finetune_cmd, finetune_args);

    auto* extract_cmd = app.add_subcommand("extract", "Extract a target sound from a mixture");
    extract_cmd->add_option("--mixture", extract_args.mixture, "Mixture WAV (24 kHz mono)")
        ->required();
    extract_cmd->add_option("--ref-audio", extract_args.ref_audio, "Reference audio WAV");
    extract_cmd->add_option("--ref-text", extract_args.ref_text, "Reference class label");
    extract_cmd->add_option("--gamma", extract_args.gamma,
                            "Guidance scale (default 2.5 audio / 3.0 text)");
    extract_cmd->add_option("--steps", extract_args.steps, "Inference steps (default 50)");
    extract_cmd->add_option("--seed", extract_args.seed, "Sampler seed");
    extract_cmd->add_option("--checkpoint", extract_args.checkpoint, "Model checkpoint")
        ->required();
    extract_cmd->add_option("--out", extract_args.out, "Output WAV path")->required();
    extract_cmd->add_option("--embedder-stats", extract_args.embedder_stats,
                            "Embedder stats file (default: recorded in the checkpoint)");

    auto* eval_cmd = app.add_subcommand("evaluate", "Objective evaluation over a dataset manifest");
    add_common(eval_cmd, eval_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return run_synth_data(synth_args);
        if (train_cmd->parsed()) return run_train(train_args, false);
        if (finetune_cmd->parsed()) return run_train(finetune_args, true);
        if (extract_cmd->parsed()) return run_extract(extract_args);
        if (eval_cmd->parsed()) return run_evaluate(eval_args);
    } catch (const tse::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tse::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
