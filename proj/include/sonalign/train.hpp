#pragma once

#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sonalign/corpus.hpp"
#include "sonalign/dsp.hpp"
#include "sonalign/encoder.hpp"
#include "sonalign/logmel.hpp"
#include "sonalign/loss.hpp"
#include "sonalign/optim.hpp"
#include "sonalign/projection.hpp"
#include "sonalign/teacher.hpp"
#include "sonalign/wav.hpp"

namespace sonalign {

// Alignment trainer: per optimizer step, grad_accum micro-batches of `batch`
// samples each (drop-last). Every sample runs one masked encoder pass; the
// batch-level structure loss runs on a separate tape over the pooled
// embeddings, and its pooled-gradient rows are injected back into the item
// tapes as backward seeds. AdamW with a linear warmup→decay schedule.

struct TrainConfig {
    double lambda_align = 1.0;
    double lambda_ssm = 1.0;
    double lr = 1e-5;
    int epochs = 50;
    int64_t warmup_steps = 400;
    size_t batch = 24;
    size_t grad_accum = 2;
    AdamWConfig adamw;
    CkaMode cka_mode = CkaMode::SampleGram;
    AlignLossKind align_kind = AlignLossKind::Cka;
    std::vector<size_t> align_layers;  // block indices; empty = last block only
    bool augment = true;
    bool head_dropout = true;  // dropout active in the heads while training
    uint64_t seed = 0;
    size_t threads = 2;  // chunk count; part of the reproducibility contract
    std::string checkpoint_dir;  // empty disables per-epoch checkpoints
    std::string metrics_path;    // empty disables the JSONL log
    size_t projector_hidden = 1024;
    size_t shared_dim = 512;
    double head_dropout_p = 0.2;

    void validate(size_t corpus_size, size_t encoder_blocks) const {
        if (lambda_align < 0 || lambda_ssm < 0) throw ConfigError("loss weights must be nonnegative");
        if (lambda_align == 0 && lambda_ssm == 0)
            throw ConfigError("empty objective: both loss weights are zero");
        if (batch < 2) throw ConfigError("batch must be at least 2 (structure loss needs a batch)");
        if (grad_accum < 1) throw ConfigError("grad_accum must be at least 1");
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (threads < 1) throw ConfigError("threads must be at least 1");
        const size_t per_step = batch * grad_accum;
        if (corpus_size < per_step)
            throw ConfigError("corpus of " + std::to_string(corpus_size) + " clips cannot fill one step of " +
                              std::to_string(per_step) + " samples");
        const int64_t total = total_steps(corpus_size);
        if (warmup_steps >= total)
            throw ConfigError("warmup_steps " + std::to_string(warmup_steps) + " >= total steps " +
                              std::to_string(total));
        for (size_t b : align_layers)
            if (b >= encoder_blocks) throw ConfigError("align layer index out of range");
    }

    int64_t steps_per_epoch(size_t corpus_size) const {
        return static_cast<int64_t>(corpus_size / (batch * grad_accum));
    }
    int64_t total_steps(size_t corpus_size) const {
        return static_cast<int64_t>(epochs) * steps_per_epoch(corpus_size);
    }

    std::vector<size_t> resolved_align_layers(size_t encoder_blocks) const {
        if (!align_layers.empty()) return align_layers;
        return {encoder_blocks - 1};
    }
};

inline std::string audio_head_name(size_t block, size_t last_block) {
    return block == last_block ? std::string("proj_a") : "proj_a.b" + std::to_string(block);
}

// fresh projection heads for a given layer set; the last block's audio head
// is the canonical "proj_a" used by the embedding exporter
inline NamedTensors init_alignment_heads(const TrainConfig& cfg, const EncoderConfig& enc, size_t teacher_dim,
                                         uint64_t seed) {
    NamedTensors heads;
    const size_t last = enc.blocks - 1;
    for (size_t b : cfg.resolved_align_layers(enc.blocks)) {
        ProjectionConfig pc{enc.embed_dim, cfg.projector_hidden, cfg.shared_dim, cfg.head_dropout_p};
        for (auto& item : init_projection(pc, audio_head_name(b, last), seed).items)
            heads.add(item.first, std::move(item.second));
    }
    ProjectionConfig lc{teacher_dim, cfg.projector_hidden, cfg.shared_dim, cfg.head_dropout_p};
    for (auto& item : init_projection(lc, "proj_l", seed + 1).items) heads.add(item.first, std::move(item.second));
    return heads;
}

// ---- one micro-batch: samples already rendered to patches + masks ----

struct MicroBatch {
    std::vector<Matrix> patches;
    std::vector<PatchMask> masks;
    Matrix teacher;  // B × teacher_dim, frozen
    std::map<std::string, Matrix> dropout_masks;  // per head prefix, B × hidden
};

struct MicroBatchResult {
    double align = 0.0;
    double ssm = 0.0;
    double total = 0.0;
    double cka_metric = 0.0;
    std::map<std::string, Matrix> grads;  // tensor name → gradient, pos tables padded
};

namespace detail {

inline void pad_and_accumulate(std::map<std::string, Matrix>& into, const std::string& name, const Matrix& g,
                               const NamedTensors& reference, double scale) {
    const Matrix& full = reference.at(name);
    auto it = into.find(name);
    if (it == into.end()) it = into.emplace(name, Matrix(full.rows(), full.cols())).first;
    Matrix& acc = it->second;
    for (size_t r = 0; r < g.rows(); ++r)
        for (size_t c = 0; c < g.cols(); ++c) acc(r, c) += scale * g(r, c);
}

struct ChunkOutputs {
    Tape tape;
    std::vector<EncoderForward> forwards;  // per item in chunk
    std::vector<size_t> item_indices;      // global micro-batch indices
};

}  // namespace detail

// Forward (and optionally backward) for one micro-batch. `all_params` must
// contain both encoder tensors and head tensors for gradient padding.
inline MicroBatchResult micro_batch_pass(const EncoderParams& encoder, const NamedTensors& heads,
                                         const TrainConfig& cfg, const MicroBatch& mb, bool with_grads,
                                         double grad_scale = 1.0) {
    const size_t b = mb.patches.size();
    if (b < 2) throw NumericError("degenerate micro-batch of " + std::to_string(b) + " samples");
    const size_t blocks = encoder.cfg.blocks;
    const size_t last = blocks - 1;
    const auto layers = cfg.resolved_align_layers(blocks);

    // 1. per-item encoder passes, chunked over worker tapes
    const size_t chunk_count = std::min(cfg.threads, b);
    std::vector<detail::ChunkOutputs> chunks(chunk_count);
    {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(chunk_count);
        for (size_t ci = 0; ci < chunk_count; ++ci) {
            const size_t lo = ci * b / chunk_count;
            const size_t hi = (ci + 1) * b / chunk_count;
            workers.emplace_back([&, ci, lo, hi] {
                try {
                    auto& chunk = chunks[ci];
                    EncoderBindings bind;
                    size_t staged_rows = 0;
                    for (size_t i = lo; i < hi; ++i) {
                        if (mb.patches[i].rows() != staged_rows) {
                            // restage when the patch-count geometry changes
                            bind = stage_encoder(chunk.tape, encoder, mb.patches[i].rows());
                            staged_rows = mb.patches[i].rows();
                        }
                        chunk.forwards.push_back(encoder_forward(chunk.tape, bind, mb.patches[i], mb.masks[i]));
                        chunk.item_indices.push_back(i);
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

    // order chunk items back into micro-batch order
    std::vector<std::pair<size_t, size_t>> locate(b);  // item → (chunk, offset)
    for (size_t ci = 0; ci < chunk_count; ++ci)
        for (size_t k = 0; k < chunks[ci].item_indices.size(); ++k)
            locate[chunks[ci].item_indices[k]] = {ci, k};

    MicroBatchResult res;
    for (size_t i = 0; i < b; ++i) {
        auto [ci, k] = locate[i];
        res.ssm += chunks[ci].tape.value(chunks[ci].forwards[k].ssm).scalar();
    }
    res.ssm /= static_cast<double>(b);

    // 2. batch tape: pooled embeddings per aligned layer → heads → structure loss
    Tape bt;
    std::map<size_t, NodeId> pooled_leaf;         // layer → B×embed leaf
    std::map<size_t, NodeId> align_nodes;         // layer → loss node
    GradientReport head_report;
    if (cfg.lambda_align > 0.0) {
        const size_t d = encoder.cfg.embed_dim;
        NodeId teacher_leaf = bt.frozen_param(mb.teacher, "teacher.batch");
        ProjectionConfig lang_cfg{mb.teacher.cols(), cfg.projector_hidden, cfg.shared_dim, cfg.head_dropout_p};
        ProjectionBindings lang_bind = stage_projection(bt, heads, "proj_l", lang_cfg);
        const Matrix* lang_mask = nullptr;
        if (cfg.head_dropout) {
            auto it = mb.dropout_masks.find("proj_l");
            if (it == mb.dropout_masks.end()) throw Error("missing dropout mask for proj_l");
            lang_mask = &it->second;
        }
        NodeId hl = project(bt, lang_bind, teacher_leaf, cfg.head_dropout, lang_mask);

        NodeId loss_sum = -1;
        for (size_t layer : layers) {
            Matrix pooled(b, d);
            for (size_t i = 0; i < b; ++i) {
                auto [ci, k] = locate[i];
                const Matrix& p = chunks[ci].tape.value(chunks[ci].forwards[k].block_pooled[layer]);
                for (size_t c = 0; c < d; ++c) pooled(i, c) = p(0, c);
            }
            const std::string head = audio_head_name(layer, last);
            NodeId leaf = bt.param(pooled, "batch.pooled." + std::to_string(layer));
            pooled_leaf[layer] = leaf;
            ProjectionConfig audio_cfg{d, cfg.projector_hidden, cfg.shared_dim, cfg.head_dropout_p};
            ProjectionBindings audio_bind = stage_projection(bt, heads, head, audio_cfg);
            const Matrix* audio_mask = nullptr;
            if (cfg.head_dropout) {
                auto it = mb.dropout_masks.find(head);
                if (it == mb.dropout_masks.end()) throw Error("missing dropout mask for " + head);
                audio_mask = &it->second;
            }
            NodeId ha = project(bt, audio_bind, leaf, cfg.head_dropout, audio_mask);
            NodeId align = align_loss_node(bt, ha, hl, cfg.cka_mode, cfg.align_kind);
            align_nodes[layer] = align;
            res.cka_metric += cka(bt.value(ha), bt.value(hl), cfg.cka_mode);
            loss_sum = (loss_sum < 0) ? align : bt.add(loss_sum, align);
        }
        NodeId align_avg = bt.scalar_mul(loss_sum, 1.0 / static_cast<double>(layers.size()));
        res.align = bt.value(align_avg).scalar();
        res.cka_metric /= static_cast<double>(layers.size());

        if (with_grads) {
            NodeId weighted = bt.scalar_mul(align_avg, cfg.lambda_align);
            head_report = bt.backward(weighted);
        }
    }
    res.total = cfg.lambda_align * res.align + cfg.lambda_ssm * res.ssm;
    if (!std::isfinite(res.total)) throw NumericError("non-finite training loss");
    if (!with_grads) return res;

    // reference table for gradient shapes: encoder + heads
    NamedTensors reference;
    for (const auto& [n, m] : encoder.tensors.items) reference.add(n, m);
    for (const auto& [n, m] : heads.items) reference.add(n, m);

    // 3. head gradients (and pooled-row seeds) from the batch tape
    std::map<size_t, Matrix> pooled_grads;
    for (auto& e : head_report.entries) {
        if (e.name.rfind("batch.pooled.", 0) == 0) {
            size_t layer = std::stoul(e.name.substr(std::string("batch.pooled.").size()));
            pooled_grads.emplace(layer, std::move(e.grad));
        } else {
            detail::pad_and_accumulate(res.grads, e.name, e.grad, reference, grad_scale);
        }
    }

    // 4. item-tape backward with seeds: ssm weight + pooled gradient rows
    const double ssm_seed = cfg.lambda_ssm / static_cast<double>(b);
    for (size_t ci = 0; ci < chunk_count; ++ci) {
        std::vector<std::pair<NodeId, Matrix>> seeds;
        auto& chunk = chunks[ci];
        for (size_t k = 0; k < chunk.forwards.size(); ++k) {
            const size_t i = chunk.item_indices[k];
            if (cfg.lambda_ssm > 0.0) seeds.emplace_back(chunk.forwards[k].ssm, Matrix(1, 1, {ssm_seed}));
            for (auto& [layer, g] : pooled_grads) {
                Matrix row(1, g.cols());
                for (size_t c = 0; c < g.cols(); ++c) row(0, c) = g(i, c);
                seeds.emplace_back(chunk.forwards[k].block_pooled[layer], std::move(row));
            }
        }
        if (seeds.empty()) continue;
        GradientReport rep = chunk.tape.backward_seeded(seeds);
        for (auto& e : rep.entries) detail::pad_and_accumulate(res.grads, e.name, e.grad, reference, grad_scale);
    }
    return res;
}

// ---- sample rendering: manifest entry → patches + mask ----

struct RenderedSample {
    Matrix patches;
    PatchMask mask;
};

inline RenderedSample render_sample(const ManifestEntry& entry, const EncoderConfig& enc_cfg, bool do_augment,
                                    uint64_t sample_seed) {
    Spectrogram spec;
    if (do_augment) {
        if (entry.wav_path.empty())
            throw ConfigError("augmentation requires wav_path in the manifest (clip " + entry.audio_id + ")");
        Waveform w = load_wav(entry.wav_path);
        if (w.sample_rate != 16000) w = resample(w, 16000);
        Rng aug_rng(Rng::derive(sample_seed, 0xa06));
        auto [augmented, kind] = augment(w, aug_rng);
        spec = logmel(augmented);
    } else {
        spec = load_spectrogram(entry.spectrogram_path);
    }
    auto [patches, grid] = patchify(spec, enc_cfg);
    Rng mask_rng(Rng::derive(sample_seed, 0x3a5c));
    RenderedSample out;
    out.patches = std::move(patches);
    out.mask = make_patch_mask(out.patches.rows(), enc_cfg.mask_ratio, mask_rng);
    return out;
}

// ---- the training loop ----

struct StepMetrics {
    int64_t step = 0;
    double lr = 0.0;
    double align = 0.0;
    double ssm = 0.0;
    double total = 0.0;
    double cka = 0.0;
};

struct TrainOutcome {
    EncoderParams encoder;
    NamedTensors heads;
    std::vector<StepMetrics> metrics;
    std::vector<double> epoch_mean_align;
};

inline nlohmann::json step_metrics_json(const StepMetrics& m) {
    return nlohmann::json{{"step", m.step},   {"lr", m.lr},       {"align_loss", m.align},
                          {"ssm_loss", m.ssm}, {"total_loss", m.total}, {"cka", m.cka}};
}

inline TrainOutcome train_alignment(const TrainConfig& cfg, const std::vector<ManifestEntry>& corpus,
                                    EncoderParams encoder, TeacherProvider& teacher) {
    if (corpus.empty()) throw ConfigError("training corpus is empty");
    cfg.validate(corpus.size(), encoder.cfg.blocks);
    const auto layers = cfg.resolved_align_layers(encoder.cfg.blocks);

    // teacher embeddings resolved once; frozen for the whole run
    std::vector<std::vector<double>> teacher_vecs(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i)
        teacher_vecs[i] = teacher.embed(corpus[i].audio_id, corpus[i].report).vector;
    const size_t teacher_dim = teacher.dim();

    NamedTensors heads = init_alignment_heads(cfg, encoder.cfg, teacher_dim, Rng::derive(cfg.seed, 0x6ead));

    NamedTensors all_params;  // shared parameter table the optimizer walks
    for (auto& [n, m] : encoder.tensors.items) all_params.add(n, std::move(m));
    for (auto& [n, m] : heads.items) all_params.add(n, std::move(m));
    encoder.tensors.items.clear();
    heads.items.clear();

    auto encoder_view = [&]() {
        EncoderParams view;
        view.cfg = encoder.cfg;
        for (const auto& [n, m] : all_params.items)
            if (n.rfind("enc.", 0) == 0 || n.rfind("dec.", 0) == 0) view.tensors.add(n, m);
        return view;
    };
    auto heads_view = [&]() {
        NamedTensors view;
        for (const auto& [n, m] : all_params.items)
            if (n.rfind("proj_", 0) == 0) view.add(n, m);
        return view;
    };

    AdamW opt(cfg.adamw);
    const int64_t steps_per_epoch = cfg.steps_per_epoch(corpus.size());
    const int64_t total_steps_n = cfg.total_steps(corpus.size());
    const size_t last = encoder.cfg.blocks - 1;

    std::ofstream metrics_file;
    if (!cfg.metrics_path.empty()) {
        metrics_file.open(cfg.metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics_file) throw IoError("cannot open metrics log: " + cfg.metrics_path);
    }

    TrainOutcome outcome;
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(corpus.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(Rng::derive(cfg.seed, 0xe70c + static_cast<uint64_t>(epoch)));
        shuffle(order, shuffle_rng);

        double epoch_align_sum = 0.0;
        int64_t epoch_steps = 0;
        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            ++step;
            std::map<std::string, Matrix> grads;
            StepMetrics sm;
            sm.step = step;
            EncoderParams enc_now = encoder_view();
            NamedTensors heads_now = heads_view();
            for (size_t micro = 0; micro < cfg.grad_accum; ++micro) {
                MicroBatch mb;
                const size_t base = (static_cast<size_t>(s) * cfg.grad_accum + micro) * cfg.batch;
                std::vector<size_t> idx(cfg.batch);
                for (size_t i = 0; i < cfg.batch; ++i) idx[i] = order[base + i];

                // parallel sample rendering (wav → augment → logmel → patches)
                mb.patches.resize(cfg.batch);
                mb.masks.resize(cfg.batch);
                {
                    std::vector<std::thread> workers;
                    std::vector<std::exception_ptr> errors(cfg.threads);
                    for (size_t ci = 0; ci < cfg.threads; ++ci) {
                        workers.emplace_back([&, ci] {
                            try {
                                for (size_t i = ci; i < cfg.batch; i += cfg.threads) {
                                    uint64_t sample_seed = Rng::derive(
                                        cfg.seed, 0x7a3f1 + static_cast<uint64_t>(epoch) * 1000003ULL + idx[i]);
                                    auto rendered =
                                        render_sample(corpus[idx[i]], encoder.cfg, cfg.augment, sample_seed);
                                    mb.patches[i] = std::move(rendered.patches);
                                    mb.masks[i] = std::move(rendered.mask);
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

                mb.teacher = Matrix(cfg.batch, teacher_dim);
                for (size_t i = 0; i < cfg.batch; ++i)
                    for (size_t c = 0; c < teacher_dim; ++c) mb.teacher(i, c) = teacher_vecs[idx[i]][c];

                if (cfg.head_dropout && cfg.lambda_align > 0.0) {
                    Rng drop_rng(Rng::derive(cfg.seed, 0xd809 + static_cast<uint64_t>(step) * 11ULL + micro));
                    for (size_t layer : layers)
                        mb.dropout_masks.emplace(
                            audio_head_name(layer, last),
                            make_dropout_mask(cfg.batch, cfg.projector_hidden, cfg.head_dropout_p, drop_rng));
                    mb.dropout_masks.emplace(
                        "proj_l", make_dropout_mask(cfg.batch, cfg.projector_hidden, cfg.head_dropout_p, drop_rng));
                }

                auto result = micro_batch_pass(enc_now, heads_now, cfg, mb, /*with_grads=*/true,
                                               1.0 / static_cast<double>(cfg.grad_accum));
                for (auto& [name, g] : result.grads) {
                    auto it = grads.find(name);
                    if (it == grads.end())
                        grads.emplace(name, std::move(g));
                    else
                        for (size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
                }
                sm.align += result.align / static_cast<double>(cfg.grad_accum);
                sm.ssm += result.ssm / static_cast<double>(cfg.grad_accum);
                sm.total += result.total / static_cast<double>(cfg.grad_accum);
                sm.cka += result.cka_metric / static_cast<double>(cfg.grad_accum);
            }
            sm.lr = lr_at(step, cfg.lr, cfg.warmup_steps, total_steps_n);
            opt.step(all_params, grads, sm.lr);
            if (metrics_file) metrics_file << step_metrics_json(sm).dump() << "\n";
            outcome.metrics.push_back(sm);
            epoch_align_sum += sm.align;
            ++epoch_steps;
        }
        outcome.epoch_mean_align.push_back(epoch_steps ? epoch_align_sum / static_cast<double>(epoch_steps) : 0.0);

        if (!cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch + 1);
            EncoderParams enc_now = encoder_view();
            NamedTensors heads_now = heads_view();
            save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), enc_now, &heads_now);
        }
    }

    outcome.encoder = encoder_view();
    outcome.heads = heads_view();
    if (!cfg.checkpoint_dir.empty()) {
        save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / "final.ckpt").string(), outcome.encoder,
                        &outcome.heads);
    }
    return outcome;
}

}  // namespace sonalign
