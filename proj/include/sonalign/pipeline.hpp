#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "sonalign/config.hpp"
#include "sonalign/corpus.hpp"
#include "sonalign/eval.hpp"
#include "sonalign/retrieval.hpp"
#include "sonalign/train.hpp"

namespace sonalign {

// Operator commands. Each reads a ResolvedConfig (file keys overridden by
// CLI flags), writes its data artifacts plus a run manifest, and returns a
// summary struct. (config digest, seed) determines every data artifact.

namespace fs = std::filesystem;

// ---- gen-data ----

struct GenDataResult {
    size_t clips = 0;
    size_t train_clips = 0;
    size_t test_clips = 0;
    std::string corpus_manifest;
    std::string train_manifest;
    std::string test_manifest;
};

inline GenDataResult cmd_gen_data(const ResolvedConfig& cfg) {
    SyntheticConfig sc;
    sc.classes = static_cast<size_t>(cfg.get_int("classes", 4));
    sc.subjects = static_cast<size_t>(cfg.get_int("subjects", 40));
    sc.clips = static_cast<size_t>(cfg.get_int("clips", 2000));
    sc.seconds = cfg.get_double("seconds", 1.0);
    sc.sample_rate = static_cast<int>(cfg.get_int("sample_rate", 16000));
    sc.seed = cfg.get_seed("seed", 0);
    sc.test_fraction = cfg.get_double("test_fraction", 0.2);
    sc.write_wavs = cfg.get_bool("write_wavs", true);
    const std::string out_dir = cfg.require_string("out");

    RunManifest rm;
    rm.command = "gen-data";
    rm.config_digest = cfg.digest();
    rm.resolved_config = cfg.values();
    rm.seed = sc.seed;
    rm.started_at = iso8601_now();

    auto corpus = generate_synthetic_corpus(sc, out_dir);

    GenDataResult res;
    res.clips = corpus.all.size();
    res.train_clips = corpus.train.size();
    res.test_clips = corpus.test.size();
    res.corpus_manifest = (fs::path(out_dir) / "corpus.jsonl").string();
    res.train_manifest = (fs::path(out_dir) / "corpus_train.jsonl").string();
    res.test_manifest = (fs::path(out_dir) / "corpus_test.jsonl").string();

    rm.finished_at = iso8601_now();
    rm.artifacts = {res.corpus_manifest, res.train_manifest, res.test_manifest};
    rm.write((fs::path(out_dir) / "run_manifest.json").string());
    return res;
}

// ---- shared plumbing ----

inline std::vector<ManifestEntry> load_filtered_corpus(const std::string& manifest_path,
                                                       const std::string& filter) {
    auto entries = load_manifest(manifest_path);
    if (filter.empty()) return entries;
    // filter grammar: "label=a|b" or "dataset=x"
    auto eq = filter.find('=');
    if (eq == std::string::npos) throw ConfigError("corpus filter must look like key=value[|value...]");
    const std::string key = filter.substr(0, eq);
    std::set<std::string> wanted;
    std::string rest = filter.substr(eq + 1);
    size_t pos = 0;
    while (pos != std::string::npos) {
        auto bar = rest.find('|', pos);
        wanted.insert(rest.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos));
        pos = bar == std::string::npos ? bar : bar + 1;
    }
    std::vector<ManifestEntry> out;
    for (auto& e : entries) {
        const std::string& v = key == "label" ? e.label : key == "dataset" ? e.dataset : e.subject_id;
        if (key != "label" && key != "dataset" && key != "subject_id")
            throw ConfigError("unknown corpus filter key: " + key);
        if (wanted.count(v)) out.push_back(std::move(e));
    }
    if (out.empty()) throw ConfigError("corpus filter '" + filter + "' matched nothing");
    return out;
}

inline std::unique_ptr<TeacherProvider> make_teacher(const ResolvedConfig& cfg, RemoteTransport transport = {}) {
    const std::string kind = cfg.get_string("teacher", "hashed");
    const auto dim = static_cast<size_t>(cfg.get_int("teacher_dim", 2048));
    if (kind == "hashed") return std::make_unique<HashedTeacher>(dim, cfg.get_seed("teacher_seed", 0));
    if (kind == "file") return std::make_unique<FileTeacher>(cfg.require_string("teacher_file"), dim);
    if (kind == "remote") {
        if (!transport) throw ConfigError("remote teacher requested but no transport is wired");
        RemoteConfig rc;
        rc.dim = dim;
        rc.max_batch = static_cast<size_t>(cfg.get_int("remote_max_batch", 16));
        rc.max_retries = static_cast<int>(cfg.get_int("remote_max_retries", 2));
        rc.backoff_ms = static_cast<int>(cfg.get_int("remote_backoff_ms", 100));
        const char* env_cache = std::getenv("SONALIGN_CACHE_DIR");
        rc.cache_dir = cfg.get_string("cache_dir", env_cache ? env_cache : "");
        return std::make_unique<RemoteTeacherProvider>(rc, std::move(transport));
    }
    throw ConfigError("unknown teacher kind: " + kind + " (expected hashed|file|remote)");
}

inline EncoderConfig encoder_config_from(const ResolvedConfig& cfg) {
    EncoderConfig e;
    e.patch_h = static_cast<size_t>(cfg.get_int("encoder.patch_h", 16));
    e.patch_w = static_cast<size_t>(cfg.get_int("encoder.patch_w", 16));
    e.embed_dim = static_cast<size_t>(cfg.get_int("encoder.embed_dim", 384));
    e.blocks = static_cast<size_t>(cfg.get_int("encoder.blocks", 4));
    e.heads = static_cast<size_t>(cfg.get_int("encoder.heads", 4));
    e.mask_ratio = cfg.get_double("encoder.mask_ratio", 0.7);
    e.decoder_dim = static_cast<size_t>(cfg.get_int("encoder.decoder_dim", 128));
    e.decoder_heads = static_cast<size_t>(cfg.get_int("encoder.decoder_heads", 4));
    e.ffn_mult = static_cast<size_t>(cfg.get_int("encoder.ffn_mult", 2));
    e.max_patches = static_cast<size_t>(cfg.get_int("encoder.max_patches", 512));
    return e;
}

inline TrainConfig train_config_from(const ResolvedConfig& cfg) {
    TrainConfig t;
    t.lambda_align = cfg.get_double("lambda_align", 1.0);
    t.lambda_ssm = cfg.get_double("lambda_ssm", 1.0);
    t.lr = cfg.get_double("lr", 1e-5);
    t.epochs = static_cast<int>(cfg.get_int("epochs", 50));
    t.warmup_steps = cfg.get_int("warmup_steps", 400);
    t.batch = static_cast<size_t>(cfg.get_int("batch", 24));
    t.grad_accum = static_cast<size_t>(cfg.get_int("grad_accum", 2));
    t.adamw.beta1 = cfg.get_double("adamw.beta1", 0.9);
    t.adamw.beta2 = cfg.get_double("adamw.beta2", 0.999);
    t.adamw.eps = cfg.get_double("adamw.eps", 1e-8);
    t.adamw.weight_decay = cfg.get_double("weight_decay", 0.01);
    const std::string mode = cfg.get_string("cka_mode", "sample");
    if (mode == "sample") t.cka_mode = CkaMode::SampleGram;
    else if (mode == "feature") t.cka_mode = CkaMode::FeatureGram;
    else throw ConfigError("cka_mode must be sample|feature, got " + mode);
    const std::string kind = cfg.get_string("align_loss", "cka");
    if (kind == "cka") t.align_kind = AlignLossKind::Cka;
    else if (kind == "mse") t.align_kind = AlignLossKind::Mse;
    else throw ConfigError("align_loss must be cka|mse, got " + kind);
    const std::string layers = cfg.get_string("align_layers", "");
    if (!layers.empty()) {
        size_t pos = 0;
        while (pos != std::string::npos) {
            auto comma = layers.find(',', pos);
            t.align_layers.push_back(std::stoul(layers.substr(pos, comma - pos)));
            pos = comma == std::string::npos ? comma : comma + 1;
        }
    }
    t.augment = cfg.get_bool("augment", true);
    t.head_dropout = cfg.get_bool("head_dropout", true);
    t.seed = cfg.get_seed("seed", 0);
    t.threads = static_cast<size_t>(cfg.get_int("threads", 2));
    t.projector_hidden = static_cast<size_t>(cfg.get_int("projector_hidden", 1024));
    t.shared_dim = static_cast<size_t>(cfg.get_int("shared_dim", 512));
    t.head_dropout_p = cfg.get_double("head_dropout_p", 0.2);
    return t;
}

// ---- align ----

struct AlignResult {
    std::string final_checkpoint;
    std::string metrics_path;
    double first_epoch_mean_align = 0.0;
    double final_epoch_mean_align = 0.0;
    int64_t steps = 0;
};

inline AlignResult cmd_align(const ResolvedConfig& cfg, RemoteTransport transport = {}) {
    const std::string corpus_path = cfg.require_string("corpus");
    const std::string out_dir = cfg.require_string("out");
    fs::create_directories(out_dir);

    // validation pass: collect every config problem before starting
    std::vector<std::string> problems;
    TrainConfig tc;
    EncoderConfig ec;
    std::vector<ManifestEntry> corpus;
    try {
        tc = train_config_from(cfg);
    } catch (const ConfigError& e) {
        problems.push_back(e.what());
    }
    try {
        ec = encoder_config_from(cfg);
        ec.validate();
    } catch (const ConfigError& e) {
        problems.push_back(e.what());
    }
    try {
        corpus = load_filtered_corpus(corpus_path, cfg.get_string("corpus_filter", ""));
    } catch (const Error& e) {
        problems.push_back(e.what());
    }
    const std::string init_mode = cfg.get_string("init", "random");
    if (init_mode != "random" && init_mode != "checkpoint")
        problems.push_back("init must be random|checkpoint, got " + init_mode);
    if (init_mode == "checkpoint" && !cfg.has("init_checkpoint"))
        problems.push_back("init=checkpoint requires init_checkpoint");
    if (!problems.empty()) {
        std::string all = "configuration invalid:";
        for (const auto& p : problems) all += "\n  - " + p;
        throw ConfigError(all);
    }
    try {
        tc.validate(corpus.size(), ec.blocks);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("configuration invalid:\n  - ") + e.what());
    }

    RunManifest rm;
    rm.command = "align";
    rm.config_digest = cfg.digest();
    rm.resolved_config = cfg.values();
    rm.seed = tc.seed;
    rm.started_at = iso8601_now();
    rm.add_input(corpus_path);

    EncoderParams params;
    if (init_mode == "checkpoint") {
        const std::string ck = cfg.require_string("init_checkpoint");
        rm.add_input(ck);
        params = init_params(ec, tc.seed, InitMode::FromCheckpoint, ck);
    } else {
        params = init_params(ec, tc.seed, InitMode::Random);
    }

    tc.checkpoint_dir = out_dir;
    tc.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();

    auto teacher = make_teacher(cfg, std::move(transport));
    auto outcome = train_alignment(tc, corpus, std::move(params), *teacher);

    AlignResult res;
    res.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
    res.metrics_path = tc.metrics_path;
    res.first_epoch_mean_align = outcome.epoch_mean_align.front();
    res.final_epoch_mean_align = outcome.epoch_mean_align.back();
    res.steps = static_cast<int64_t>(outcome.metrics.size());

    rm.finished_at = iso8601_now();
    rm.artifacts = {res.final_checkpoint, res.metrics_path};
    rm.write((fs::path(out_dir) / "run_manifest.json").string());
    return res;
}

// ---- embed ----

// derive the head geometry from checkpoint tensor shapes
inline ProjectionConfig projection_config_from_tensors(const NamedTensors& t, const std::string& prefix,
                                                       double dropout = 0.2) {
    const Matrix& w1 = t.at(prefix + ".w1");
    const Matrix& w2 = t.at(prefix + ".w2");
    return ProjectionConfig{w1.rows(), w1.cols(), w2.cols(), dropout};
}

struct EmbedResult {
    std::string out_path;
    size_t count = 0;
    size_t dim = 0;
};

inline EmbedResult cmd_embed(const ResolvedConfig& cfg) {
    const std::string checkpoint_path = cfg.require_string("checkpoint");
    const std::string manifest_path = cfg.require_string("manifest");
    const std::string out_path = cfg.require_string("out");
    const std::string space = cfg.get_string("space", "shared-512");
    if (space != "encoder-384" && space != "shared-512")
        throw ConfigError("space must be encoder-384|shared-512, got " + space);
    const auto threads = static_cast<size_t>(cfg.get_int("threads", 2));

    RunManifest rm;
    rm.command = "embed";
    rm.config_digest = cfg.digest();
    rm.resolved_config = cfg.values();
    rm.seed = cfg.get_seed("seed", 0);
    rm.started_at = iso8601_now();
    rm.add_input(checkpoint_path);
    rm.add_input(manifest_path);

    Checkpoint ck = load_checkpoint(checkpoint_path);
    auto entries = load_manifest(manifest_path);
    const bool shared = space == "shared-512";
    if (shared && !ck.extra.has("proj_a.w1"))
        throw ConfigError("checkpoint has no projection heads; export encoder-384 instead");

    ProjectionConfig pc;
    if (shared) pc = projection_config_from_tensors(ck.extra, "proj_a");

    std::vector<std::vector<double>> vectors(entries.size());
    {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(threads);
        for (size_t ci = 0; ci < threads; ++ci) {
            workers.emplace_back([&, ci] {
                try {
                    for (size_t i = ci; i < entries.size(); i += threads) {
                        Spectrogram spec = load_spectrogram(entries[i].spectrogram_path);
                        auto [patches, grid] = patchify(spec, ck.encoder.cfg);
                        auto emb = encoder_embed(ck.encoder, patches);
                        std::vector<double> v;
                        if (shared) {
                            Matrix pooled(1, emb.pooled.size());
                            for (size_t c = 0; c < emb.pooled.size(); ++c) pooled(0, c) = emb.pooled[c];
                            Matrix out = project_values(ck.extra, "proj_a", pc, pooled);
                            v = out.vec();
                        } else {
                            v = emb.pooled;
                        }
                        double n = 0.0;
                        for (double x : v) n += x * x;
                        if (n == 0.0) throw NumericError("zero embedding for clip " + entries[i].audio_id);
                        const double inv = 1.0 / std::sqrt(n);
                        for (double& x : v) x *= inv;
                        vectors[i] = std::move(v);
                    }
                } catch (...) {
                    errors[ci] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<std::pair<std::string, std::vector<double>>> out_entries;
    for (size_t i = 0; i < entries.size(); ++i) out_entries.emplace_back(entries[i].audio_id, vectors[i]);
    const size_t dim = out_entries[0].second.size();
    save_embeddings(out_path, out_entries, dim);

    rm.finished_at = iso8601_now();
    rm.artifacts = {out_path};
    rm.write((fs::path(out_path).parent_path() / (fs::path(out_path).stem().string() + ".run_manifest.json"))
                 .string());
    return EmbedResult{out_path, out_entries.size(), dim};
}

// ---- probe ----

struct ProbeCmdResult {
    std::string csv_path;
    std::string task;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> values;
};

namespace detail {

inline std::map<std::string, std::vector<double>> embeddings_by_id(const std::string& path) {
    auto loaded = load_embeddings(path);
    std::map<std::string, std::vector<double>> out;
    for (auto& [id, vec] : loaded.entries) out.emplace(std::move(id), std::move(vec));
    return out;
}

inline Matrix features_for(const std::vector<ManifestEntry>& entries,
                           const std::map<std::string, std::vector<double>>& embs) {
    if (entries.empty()) throw Error("no manifest entries to probe");
    auto first = embs.find(entries[0].audio_id);
    if (first == embs.end()) throw Error("embedding file has no vector for id '" + entries[0].audio_id + "'");
    Matrix x(entries.size(), first->second.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        auto it = embs.find(entries[i].audio_id);
        if (it == embs.end()) throw Error("embedding file has no vector for id '" + entries[i].audio_id + "'");
        for (size_t c = 0; c < it->second.size(); ++c) x(i, c) = it->second[c];
    }
    return x;
}

}  // namespace detail

// Classification: per-seed probe train on the train manifest (stratified
// train/val carve-out), AUROC on the test manifest, 5-seed mean ± std.
// Regression: leave-one-subject-out MAE on the train manifest.
inline ProbeCmdResult cmd_probe(const ResolvedConfig& cfg) {
    const std::string emb_path = cfg.require_string("embeddings");
    const std::string train_path = cfg.require_string("train_manifest");
    const std::string task = cfg.get_string("task", "classification");
    const std::string out_csv = cfg.require_string("out");

    RunManifest rm;
    rm.command = "probe";
    rm.config_digest = cfg.digest();
    rm.resolved_config = cfg.values();
    rm.seed = cfg.get_seed("seed", 0);
    rm.started_at = iso8601_now();
    rm.add_input(emb_path);
    rm.add_input(train_path);

    auto embs = detail::embeddings_by_id(emb_path);
    auto train_entries = load_manifest(train_path);

    ProbeConfig pc;
    pc.head = cfg.get_string("head", "linear") == "mlp" ? ProbeHead::OneHiddenLayer : ProbeHead::Linear;
    pc.hidden = static_cast<size_t>(cfg.get_int("hidden", 64));
    pc.lr = cfg.get_double("probe_lr", 1e-4);
    pc.l2 = cfg.get_double("probe_l2", 1e-4);
    pc.patience = static_cast<int>(cfg.get_int("patience", 5));
    pc.max_epochs = static_cast<int>(cfg.get_int("max_epochs", 200));
    pc.val_fraction = cfg.get_double("val_fraction", 0.2);

    ProbeCmdResult res;
    res.csv_path = out_csv;
    res.task = cfg.get_string("task_name", task);

    if (task == "classification") {
        const std::string test_path = cfg.require_string("test_manifest");
        rm.add_input(test_path);
        auto test_entries = load_manifest(test_path);

        std::set<std::string> label_set;
        for (const auto& e : train_entries) label_set.insert(e.label);
        std::vector<std::string> classes(label_set.begin(), label_set.end());
        if (classes.size() < 2) throw ConfigError("classification needs at least 2 labels in the train manifest");
        auto class_index = [&](const std::string& l) {
            auto it = std::find(classes.begin(), classes.end(), l);
            if (it == classes.end()) throw Error("test label '" + l + "' unseen in the train manifest");
            return static_cast<size_t>(it - classes.begin());
        };

        Matrix xtrain = detail::features_for(train_entries, embs);
        Matrix xtest = detail::features_for(test_entries, embs);
        std::vector<double> ytrain(train_entries.size());
        for (size_t i = 0; i < train_entries.size(); ++i)
            ytrain[i] = static_cast<double>(class_index(train_entries[i].label));
        std::vector<size_t> ytest(test_entries.size());
        for (size_t i = 0; i < test_entries.size(); ++i) ytest[i] = class_index(test_entries[i].label);

        std::vector<uint64_t> seeds;
        for (int64_t s = cfg.get_int("first_seed", 0); s < cfg.get_int("first_seed", 0) + cfg.get_int("num_seeds", 5);
             ++s)
            seeds.push_back(static_cast<uint64_t>(s));

        auto run = [&](uint64_t seed) {
            ProbeConfig seeded = pc;
            seeded.seed = seed;
            auto [tr, val] = stratified_split(ytrain, ProbeTask::Classification, seeded.val_fraction, seed);
            auto probe = train_probe(xtrain, ytrain, ProbeTask::Classification, classes.size(), tr, val, seeded);
            Matrix scores = probe_scores(probe.model, xtest);
            if (classes.size() == 2) {
                std::vector<double> s(test_entries.size());
                std::vector<int> y(test_entries.size());
                for (size_t i = 0; i < test_entries.size(); ++i) {
                    s[i] = scores(i, 1);
                    y[i] = ytest[i] == 1 ? 1 : 0;
                }
                return auroc(s, y);
            }
            return macro_auroc(scores, ytest);
        };
        auto agg = multi_seed(run, seeds, "auroc");
        res.metric = "auroc";
        res.mean = agg.mean;
        res.stddev = agg.stddev.value_or(0.0);
        res.values = agg.per_seed;
    } else if (task == "regression") {
        Matrix x = detail::features_for(train_entries, embs);
        std::vector<double> targets(train_entries.size());
        std::vector<std::string> subjects(train_entries.size());
        for (size_t i = 0; i < train_entries.size(); ++i) {
            try {
                targets[i] = std::stod(train_entries[i].label);
            } catch (const std::exception&) {
                throw ConfigError("regression needs numeric labels, got '" + train_entries[i].label + "'");
            }
            if (train_entries[i].subject_id.empty())
                throw ConfigError("regression LOSO needs subject_id in the manifest");
            subjects[i] = train_entries[i].subject_id;
        }
        pc.seed = cfg.get_seed("seed", 0);
        auto loso = loso_cv(x, subjects, targets, pc);
        res.metric = "loso_mae";
        res.mean = loso.mean_mae;
        for (const auto& [s, m] : loso.per_subject_mae) res.values.push_back(m);
        if (res.values.size() >= 2) {
            double acc = 0.0;
            for (double v : res.values) acc += (v - res.mean) * (v - res.mean);
            res.stddev = std::sqrt(acc / static_cast<double>(res.values.size() - 1));
        }
    } else {
        throw ConfigError("task must be classification|regression, got " + task);
    }

    // CSV: task,metric,mean,std,values
    std::string csv = "task,metric,mean,std,values\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", res.mean, res.stddev);
    csv += res.task + "," + res.metric + "," + buf + ",\"";
    for (size_t i = 0; i < res.values.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", res.values[i]);
        csv += std::string(i ? ";" : "") + buf;
    }
    csv += "\"\n";
    write_file_text(out_csv, csv);

    rm.finished_at = iso8601_now();
    rm.artifacts = {out_csv};
    rm.write(out_csv + ".run_manifest.json");
    return res;
}

// ---- zeroshot ----

struct ZeroShotCmdResult {
    double auroc = 0.0;
    size_t n_train = 0;
    size_t n_test = 0;
    std::string out_path;
    std::vector<std::string> class_names;
};

// Builds the retrieval index from the train split, classifies every test
// clip, and scores macro AUROC. index_side selects what the index holds:
// "audio" = shared-space clip embeddings keyed to their paired reports,
// "report" = shared-space language-head report embeddings.
inline ZeroShotCmdResult cmd_zeroshot(const ResolvedConfig& cfg) {
    const std::string checkpoint_path = cfg.require_string("checkpoint");
    const std::string train_path = cfg.require_string("train_manifest");
    const std::string test_path = cfg.require_string("test_manifest");
    const std::string out_path = cfg.require_string("out");
    const auto threads = static_cast<size_t>(cfg.get_int("threads", 2));

    RunManifest rm;
    rm.command = "zeroshot";
    rm.config_digest = cfg.digest();
    rm.resolved_config = cfg.values();
    rm.seed = cfg.get_seed("seed", 0);
    rm.started_at = iso8601_now();
    rm.add_input(checkpoint_path);
    rm.add_input(train_path);
    rm.add_input(test_path);

    auto train_entries = load_manifest(train_path);
    auto test_entries = load_manifest(test_path);

    // leakage guard
    {
        std::set<std::string> train_ids;
        for (const auto& e : train_entries) train_ids.insert(e.audio_id);
        for (const auto& e : test_entries)
            if (train_ids.count(e.audio_id))
                throw ConfigError("train/test manifests overlap on id '" + e.audio_id + "' (leakage guard)");
    }

    // optional chance guard: break the audio↔report pairing
    if (cfg.get_bool("shuffle_reports", false)) {
        std::vector<std::string> reports;
        for (const auto& e : train_entries) reports.push_back(e.report);
        Rng rng(Rng::derive(cfg.get_seed("seed", 0), 0x5f0f));
        shuffle(reports, rng);
        for (size_t i = 0; i < train_entries.size(); ++i) train_entries[i].report = reports[i];
    }

    Checkpoint ck = load_checkpoint(checkpoint_path);
    if (!ck.extra.has("proj_a.w1"))
        throw ConfigError("zero-shot needs a checkpoint with trained projection heads");
    ProjectionConfig audio_pc = projection_config_from_tensors(ck.extra, "proj_a");

    const auto teacher_dim = static_cast<size_t>(cfg.get_int("teacher_dim", 2048));
    HashedTeacher teacher(teacher_dim, cfg.get_seed("teacher_seed", 0));
    HashedTeacher text_embedder(static_cast<size_t>(cfg.get_int("text_embed_dim", 2048)),
                                cfg.get_seed("text_embed_seed", 0));

    auto embed_clips = [&](const std::vector<ManifestEntry>& entries) {
        std::vector<std::vector<double>> out(entries.size());
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(threads);
        for (size_t ci = 0; ci < threads; ++ci) {
            workers.emplace_back([&, ci] {
                try {
                    for (size_t i = ci; i < entries.size(); i += threads) {
                        Spectrogram spec = load_spectrogram(entries[i].spectrogram_path);
                        auto [patches, grid] = patchify(spec, ck.encoder.cfg);
                        auto emb = encoder_embed(ck.encoder, patches);
                        Matrix pooled(1, emb.pooled.size());
                        for (size_t c = 0; c < emb.pooled.size(); ++c) pooled(0, c) = emb.pooled[c];
                        out[i] = project_values(ck.extra, "proj_a", audio_pc, pooled).vec();
                    }
                } catch (...) {
                    errors[ci] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        return out;
    };

    const std::string index_side = cfg.get_string("index_side", "audio");
    std::map<std::string, std::string> report_texts;
    for (const auto& e : train_entries) report_texts[e.audio_id] = e.report;

    std::vector<std::pair<std::string, std::vector<double>>> index_entries;
    if (index_side == "audio") {
        auto vecs = embed_clips(train_entries);
        for (size_t i = 0; i < train_entries.size(); ++i)
            index_entries.emplace_back(train_entries[i].audio_id, std::move(vecs[i]));
    } else if (index_side == "report") {
        ProjectionConfig lang_pc = projection_config_from_tensors(ck.extra, "proj_l");
        for (const auto& e : train_entries) {
            auto emb = teacher.embed(e.audio_id, e.report);
            Matrix t(1, emb.vector.size());
            for (size_t c = 0; c < emb.vector.size(); ++c) t(0, c) = emb.vector[c];
            index_entries.emplace_back(e.audio_id, project_values(ck.extra, "proj_l", lang_pc, t).vec());
        }
    } else {
        throw ConfigError("index_side must be audio|report, got " + index_side);
    }
    auto index = VectorIndex::build(index_entries);

    // class names: explicit "label:phrase;..." override, else the train-label
    // vocabulary itself
    std::set<std::string> label_set;
    for (const auto& e : train_entries) label_set.insert(e.label);
    std::vector<std::string> labels(label_set.begin(), label_set.end());
    std::map<std::string, std::string> class_phrase;
    for (const auto& l : labels) class_phrase[l] = l;
    const std::string names_arg = cfg.get_string("class_names", "");
    if (!names_arg.empty()) {
        size_t pos = 0;
        while (pos != std::string::npos) {
            auto semi = names_arg.find(';', pos);
            std::string pair = names_arg.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
            auto colon = pair.find(':');
            if (colon == std::string::npos) throw ConfigError("class_names must be label:phrase;label:phrase");
            class_phrase[pair.substr(0, colon)] = pair.substr(colon + 1);
            pos = semi == std::string::npos ? semi : semi + 1;
        }
    }

    ZeroShotConfig zc;
    zc.k = static_cast<size_t>(cfg.get_int("k", 5));
    zc.aggregation = cfg.get_string("aggregation", "mean") == "vote" ? ZeroShotAggregation::MajorityVote
                                                                     : ZeroShotAggregation::MeanEmbedding;
    for (const auto& l : labels) zc.class_names.push_back(class_phrase[l]);

    auto test_vecs = embed_clips(test_entries);
    Matrix scores(test_entries.size(), labels.size());
    std::vector<size_t> truth(test_entries.size());
    for (size_t i = 0; i < test_entries.size(); ++i) {
        auto res = zeroshot_classify(test_vecs[i], index, report_texts, zc, text_embedder);
        for (size_t c = 0; c < labels.size(); ++c) scores(i, c) = res.class_scores[c];
        auto it = std::find(labels.begin(), labels.end(), test_entries[i].label);
        if (it == labels.end()) throw Error("test label '" + test_entries[i].label + "' unseen in train labels");
        truth[i] = static_cast<size_t>(it - labels.begin());
    }

    ZeroShotCmdResult res;
    res.auroc = macro_auroc(scores, truth);
    res.n_train = train_entries.size();
    res.n_test = test_entries.size();
    res.out_path = out_path;
    res.class_names = zc.class_names;

    nlohmann::json out{{"auroc", res.auroc},
                       {"k", zc.k},
                       {"aggregation", cfg.get_string("aggregation", "mean")},
                       {"index_side", index_side},
                       {"n_train", res.n_train},
                       {"n_test", res.n_test},
                       {"labels", labels},
                       {"class_names", zc.class_names},
                       {"shuffled_reports", cfg.get_bool("shuffle_reports", false)}};
    write_file_text(out_path, out.dump(2) + "\n");

    rm.finished_at = iso8601_now();
    rm.artifacts = {out_path};
    rm.write(out_path + ".run_manifest.json");
    return res;
}

}  // namespace sonalign
