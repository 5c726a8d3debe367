// sonalign: corpus generation, alignment training, embedding export, probing,
// and zero-shot evaluation as reproducible batch commands.

#include <cstdio>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>

#include "sonalign/pipeline.hpp"

using namespace sonalign;

namespace {

// flags collected as strings; only flags the user actually passed override
// the config file
struct FlagSet {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config_path;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        options[key] = app->add_option(flag, values[key], help);
    }
    void add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                  const std::string& help) {
        options[key + "#" + value] = app->add_flag(flag, help);
        flag_targets.emplace_back(key + "#" + value, std::make_pair(key, value));
    }
    std::vector<std::pair<std::string, std::pair<std::string, std::string>>> flag_targets;

    ResolvedConfig resolve() const {
        ResolvedConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        for (const auto& [key, opt] : options) {
            if (opt->count() == 0) continue;
            auto hash = key.find('#');
            if (hash == std::string::npos) cfg.set(key, values.at(key));
        }
        for (const auto& [tag, kv] : flag_targets) {
            if (options.at(tag)->count() > 0) cfg.set(kv.first, kv.second);
        }
        return cfg;
    }
};

RemoteTransport make_http_transport(const std::string& url, int timeout_s) {
    // split scheme://host:port/path
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("remote url needs a scheme: " + url);
    auto rest = url.substr(scheme_end + 3);
    auto slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    std::string path = slash == std::string::npos ? "/" : rest.substr(slash);
    std::string base = url.substr(0, scheme_end + 3) + hostport;
    return [base, path, timeout_s](const std::string& body) -> std::string {
        httplib::Client client(base);
        client.set_connection_timeout(timeout_s);
        client.set_read_timeout(timeout_s);
        auto res = client.Post(path, body, "application/json");
        if (!res) throw RemoteError("transport failure contacting " + base + path);
        if (res->status != 200)
            throw RemoteError("endpoint returned status " + std::to_string(res->status));
        return res->body;
    };
}

}  // namespace

int main(int argc, char** argv) {
    pin_blas_threads();
    CLI::App app{"desk-scale audio-language alignment toolkit"};
    app.require_subcommand(1);

    FlagSet gen, align, embed, probe, zeroshot;

    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic paired audio-report corpus");
    gen_cmd->add_option("--config", gen.config_path, "config file (key = value lines)");
    gen.add(gen_cmd, "--out", "out", "output directory");
    gen.add(gen_cmd, "--classes", "classes", "number of classes (2-4)");
    gen.add(gen_cmd, "--subjects", "subjects", "number of subjects");
    gen.add(gen_cmd, "--clips", "clips", "number of clips");
    gen.add(gen_cmd, "--seconds", "seconds", "clip duration in seconds");
    gen.add(gen_cmd, "--seed", "seed", "corpus seed");
    gen.add(gen_cmd, "--test-fraction", "test_fraction", "subject-disjoint test fraction");
    gen.add_flag(gen_cmd, "--no-wavs", "write_wavs", "false", "skip writing wav files");

    auto* align_cmd = app.add_subcommand("align", "train the alignment objective on a paired corpus");
    align_cmd->add_option("--config", align.config_path, "config file (key = value lines)");
    align.add(align_cmd, "--corpus", "corpus", "corpus manifest (jsonl)");
    align.add(align_cmd, "--out", "out", "run output directory");
    align.add(align_cmd, "--epochs", "epochs", "training epochs");
    align.add(align_cmd, "--lr", "lr", "peak learning rate");
    align.add(align_cmd, "--warmup-steps", "warmup_steps", "linear warmup steps");
    align.add(align_cmd, "--batch", "batch", "micro-batch size");
    align.add(align_cmd, "--grad-accum", "grad_accum", "micro-batches per optimizer step");
    align.add(align_cmd, "--lambda-align", "lambda_align", "alignment loss weight");
    align.add(align_cmd, "--lambda-ssm", "lambda_ssm", "reconstruction loss weight");
    align.add(align_cmd, "--align-loss", "align_loss", "alignment loss kind: cka|mse");
    align.add(align_cmd, "--cka-mode", "cka_mode", "gram construction: sample|feature");
    align.add(align_cmd, "--align-layers", "align_layers", "comma list of encoder blocks to align");
    align.add(align_cmd, "--corpus-filter", "corpus_filter", "keep entries matching key=val|val");
    align.add(align_cmd, "--init", "init", "random|checkpoint");
    align.add(align_cmd, "--init-checkpoint", "init_checkpoint", "checkpoint for init=checkpoint");
    align.add(align_cmd, "--seed", "seed", "run seed");
    align.add(align_cmd, "--threads", "threads", "worker chunks (part of the reproducibility contract)");
    align.add(align_cmd, "--weight-decay", "weight_decay", "adamw weight decay");
    align.add(align_cmd, "--teacher", "teacher", "hashed|file|remote");
    align.add(align_cmd, "--teacher-dim", "teacher_dim", "teacher embedding dimension");
    align.add(align_cmd, "--teacher-file", "teacher_file", "precomputed embedding file");
    align.add(align_cmd, "--remote-url", "remote_url", "remote teacher endpoint url");
    align.add(align_cmd, "--cache-dir", "cache_dir", "remote teacher cache directory");
    align.add_flag(align_cmd, "--no-ssm", "lambda_ssm", "0", "drop the reconstruction term");
    align.add_flag(align_cmd, "--no-align", "lambda_align", "0", "drop the alignment term");
    align.add_flag(align_cmd, "--no-augment", "augment", "false", "disable waveform augmentation");
    align.add_flag(align_cmd, "--no-head-dropout", "head_dropout", "false",
                   "disable dropout in the projection heads");

    auto* embed_cmd = app.add_subcommand("embed", "export frozen clip embeddings");
    embed_cmd->add_option("--config", embed.config_path, "config file");
    embed.add(embed_cmd, "--checkpoint", "checkpoint", "trained checkpoint");
    embed.add(embed_cmd, "--manifest", "manifest", "corpus manifest to embed");
    embed.add(embed_cmd, "--out", "out", "output embedding file");
    embed.add(embed_cmd, "--space", "space", "encoder-384|shared-512");
    embed.add(embed_cmd, "--threads", "threads", "worker threads");

    auto* probe_cmd = app.add_subcommand("probe", "linear probing / LOSO evaluation on frozen embeddings");
    probe_cmd->add_option("--config", probe.config_path, "config file");
    probe.add(probe_cmd, "--embeddings", "embeddings", "embedding file");
    probe.add(probe_cmd, "--train-manifest", "train_manifest", "training manifest");
    probe.add(probe_cmd, "--test-manifest", "test_manifest", "test manifest (classification)");
    probe.add(probe_cmd, "--task", "task", "classification|regression");
    probe.add(probe_cmd, "--task-name", "task_name", "name recorded in the CSV");
    probe.add(probe_cmd, "--head", "head", "linear|mlp");
    probe.add(probe_cmd, "--hidden", "hidden", "mlp hidden width");
    probe.add(probe_cmd, "--out", "out", "output CSV path");
    probe.add(probe_cmd, "--num-seeds", "num_seeds", "number of probe seeds");
    probe.add(probe_cmd, "--seed", "seed", "base seed");

    auto* zs_cmd = app.add_subcommand("zeroshot", "retrieval-based zero-shot classification");
    zs_cmd->add_option("--config", zeroshot.config_path, "config file");
    zeroshot.add(zs_cmd, "--checkpoint", "checkpoint", "trained checkpoint");
    zeroshot.add(zs_cmd, "--train-manifest", "train_manifest", "index-building manifest");
    zeroshot.add(zs_cmd, "--test-manifest", "test_manifest", "clips to classify");
    zeroshot.add(zs_cmd, "--out", "out", "output JSON path");
    zeroshot.add(zs_cmd, "--k", "k", "retrieved reports per query");
    zeroshot.add(zs_cmd, "--aggregation", "aggregation", "mean|vote");
    zeroshot.add(zs_cmd, "--index-side", "index_side", "audio|report");
    zeroshot.add(zs_cmd, "--class-names", "class_names", "label:phrase;label:phrase override");
    zeroshot.add(zs_cmd, "--seed", "seed", "seed (shuffle guard)");
    zeroshot.add(zs_cmd, "--threads", "threads", "worker threads");
    zeroshot.add_flag(zs_cmd, "--shuffle-reports", "shuffle_reports", "true",
                      "break the audio-report pairing (chance guard)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen_cmd->parsed()) {
            auto res = cmd_gen_data(gen.resolve());
            std::printf("gen-data: %zu clips (%zu train / %zu test) -> %s\n", res.clips, res.train_clips,
                        res.test_clips, res.corpus_manifest.c_str());
        } else if (align_cmd->parsed()) {
            auto cfg = align.resolve();
            RemoteTransport transport;
            if (cfg.get_string("teacher", "hashed") == "remote")
                transport = make_http_transport(cfg.require_string("remote_url"),
                                                static_cast<int>(cfg.get_int("remote_timeout_s", 30)));
            auto res = cmd_align(cfg, std::move(transport));
            std::printf("align: %lld steps, epoch-1 align %.4f -> final %.4f, checkpoint %s\n",
                        static_cast<long long>(res.steps), res.first_epoch_mean_align,
                        res.final_epoch_mean_align, res.final_checkpoint.c_str());
        } else if (embed_cmd->parsed()) {
            auto res = cmd_embed(embed.resolve());
            std::printf("embed: %zu vectors of dim %zu -> %s\n", res.count, res.dim, res.out_path.c_str());
        } else if (probe_cmd->parsed()) {
            auto res = cmd_probe(probe.resolve());
            std::printf("probe: %s %s = %.4f ± %.4f -> %s\n", res.task.c_str(), res.metric.c_str(), res.mean,
                        res.stddev, res.csv_path.c_str());
        } else if (zs_cmd->parsed()) {
            auto res = cmd_zeroshot(zeroshot.resolve());
            std::printf("zeroshot: auroc %.4f over %zu test clips (index of %zu) -> %s\n", res.auroc,
                        res.n_test, res.n_train, res.out_path.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
