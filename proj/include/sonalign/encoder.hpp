#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sonalign/logmel.hpp"
#include "sonalign/rng.hpp"
#include "sonalign/tape.hpp"

namespace sonalign {

// Audio student: a small masked-autoencoder transformer over spectrogram
// patches. Produces a pooled embedding, per-block pooled states, and a
// masked-patch reconstruction for the self-supervised loss.

struct EncoderConfig {
    size_t patch_h = 16;  // time cells per patch
    size_t patch_w = 16;  // mel cells per patch
    size_t embed_dim = 384;
    size_t blocks = 4;
    size_t heads = 4;
    double mask_ratio = 0.7;
    size_t decoder_dim = 128;
    size_t decoder_heads = 4;
    size_t ffn_mult = 2;       // FFN hidden = ffn_mult × width
    size_t max_patches = 512;  // positional table capacity

    size_t patch_cells() const { return patch_h * patch_w; }

    void validate() const {
        if (embed_dim == 0 || blocks == 0 || heads == 0) throw ConfigError("encoder: zero-sized config");
        if (embed_dim % heads != 0) throw ConfigError("encoder: embed_dim must be divisible by heads");
        if (decoder_dim % decoder_heads != 0)
            throw ConfigError("encoder: decoder_dim must be divisible by decoder_heads");
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("encoder: mask_ratio must be in (0,1)");
        if (patch_h == 0 || patch_w == 0) throw ConfigError("encoder: zero patch dims");
    }
};

// ---- parameter container ----

struct NamedTensors {
    std::vector<std::pair<std::string, Matrix>> items;

    void add(const std::string& name, Matrix m) {
        if (has(name)) throw Error("duplicate tensor name: " + name);
        items.emplace_back(name, std::move(m));
    }
    bool has(const std::string& name) const {
        for (const auto& [n, m] : items)
            if (n == name) return true;
        return false;
    }
    Matrix& at(const std::string& name) {
        for (auto& [n, m] : items)
            if (n == name) return m;
        throw Error("no tensor named " + name);
    }
    const Matrix& at(const std::string& name) const {
        for (const auto& [n, m] : items)
            if (n == name) return m;
        throw Error("no tensor named " + name);
    }
};

struct EncoderParams {
    EncoderConfig cfg;
    NamedTensors tensors;
};

// ---- patch extraction ----

struct PatchGrid {
    size_t grid_t = 0;  // patches along time
    size_t grid_f = 0;  // patches along mel
    size_t padded_t = 0;
    size_t padded_f = 0;
    size_t patches() const { return grid_t * grid_f; }
};

// Row i is the row-major flattening of patch i in raster order (time-major).
// The spectrogram is zero-padded on both axes to multiples of the patch dims.
inline std::pair<Matrix, PatchGrid> patchify(const Spectrogram& spec, const EncoderConfig& cfg) {
    if (spec.values.empty()) throw ShapeError("patchify: empty spectrogram");
    PatchGrid g;
    g.grid_t = (spec.frames() + cfg.patch_h - 1) / cfg.patch_h;
    g.grid_f = (spec.mel_bins() + cfg.patch_w - 1) / cfg.patch_w;
    g.padded_t = g.grid_t * cfg.patch_h;
    g.padded_f = g.grid_f * cfg.patch_w;
    Matrix out(g.patches(), cfg.patch_cells());
    for (size_t pt = 0; pt < g.grid_t; ++pt)
        for (size_t pf = 0; pf < g.grid_f; ++pf) {
            const size_t p = pt * g.grid_f + pf;
            for (size_t i = 0; i < cfg.patch_h; ++i)
                for (size_t j = 0; j < cfg.patch_w; ++j) {
                    const size_t t = pt * cfg.patch_h + i;
                    const size_t f = pf * cfg.patch_w + j;
                    const double v = (t < spec.frames() && f < spec.mel_bins()) ? spec.values(t, f) : 0.0;
                    out(p, i * cfg.patch_w + j) = v;
                }
        }
    return {std::move(out), g};
}

inline Matrix unpatchify(const Matrix& patches, const PatchGrid& g, const EncoderConfig& cfg) {
    Matrix out(g.padded_t, g.padded_f);
    for (size_t pt = 0; pt < g.grid_t; ++pt)
        for (size_t pf = 0; pf < g.grid_f; ++pf) {
            const size_t p = pt * g.grid_f + pf;
            for (size_t i = 0; i < cfg.patch_h; ++i)
                for (size_t j = 0; j < cfg.patch_w; ++j)
                    out(pt * cfg.patch_h + i, pf * cfg.patch_w + j) = patches(p, i * cfg.patch_w + j);
        }
    return out;
}

// ---- masking ----

struct PatchMask {
    std::vector<bool> masked;
    size_t count_masked = 0;

    size_t patches() const { return masked.size(); }
    size_t count_visible() const { return masked.size() - count_masked; }

    void validate() const {
        size_t m = 0;
        for (bool b : masked) m += b ? 1 : 0;
        if (m != count_masked) throw Error("patch mask count out of sync");
        if (count_masked == 0) throw ShapeError("patch mask with zero masked patches");
        if (count_masked == masked.size()) throw ShapeError("patch mask with zero visible patches");
    }
};

// count_masked = round(mask_ratio × patches), clamped so at least one patch
// stays on each side.
inline PatchMask make_patch_mask(size_t patches, double mask_ratio, Rng& rng) {
    if (patches < 2) throw ShapeError("need at least 2 patches to mask");
    auto count = static_cast<size_t>(std::llround(mask_ratio * static_cast<double>(patches)));
    count = std::max<size_t>(1, std::min(patches - 1, count));
    std::vector<size_t> order(patches);
    for (size_t i = 0; i < patches; ++i) order[i] = i;
    shuffle(order, rng);
    PatchMask m;
    m.masked.assign(patches, false);
    for (size_t i = 0; i < count; ++i) m.masked[order[i]] = true;
    m.count_masked = count;
    return m;
}

// ---- initialization ----

namespace detail {

// scaled uniform ±1/sqrt(fan_in); biases and LN offsets start at zero,
// LN gains at one
struct InitPlan {
    NamedTensors* t;
    Rng* rng;
    void weight(const std::string& name, size_t rows, size_t cols, size_t fan_in) {
        Matrix m(rows, cols);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t i = 0; i < m.size(); ++i) m[i] = rng->uniform(-bound, bound);
        t->add(name, std::move(m));
    }
    void zeros(const std::string& name, size_t rows, size_t cols) { t->add(name, Matrix(rows, cols)); }
    void ones(const std::string& name, size_t rows, size_t cols) {
        t->add(name, Matrix::filled(rows, cols, 1.0));
    }
};

inline void add_block_tensors(InitPlan& p, const std::string& prefix, size_t dim, size_t heads, size_t ffn) {
    const size_t dk = dim / heads;
    p.ones(prefix + ".ln1.g", 1, dim);
    p.zeros(prefix + ".ln1.b", 1, dim);
    for (size_t h = 0; h < heads; ++h) {
        const std::string hp = prefix + ".attn.h" + std::to_string(h);
        p.weight(hp + ".wq", dim, dk, dim);
        p.weight(hp + ".wk", dim, dk, dim);
        p.weight(hp + ".wv", dim, dk, dim);
        p.weight(hp + ".wo", dk, dim, dk);
    }
    p.ones(prefix + ".ln2.g", 1, dim);
    p.zeros(prefix + ".ln2.b", 1, dim);
    p.weight(prefix + ".ffn.w1", dim, ffn, dim);
    p.zeros(prefix + ".ffn.b1", 1, ffn);
    p.weight(prefix + ".ffn.w2", ffn, dim, ffn);
    p.zeros(prefix + ".ffn.b2", 1, dim);
}

}  // namespace detail

inline EncoderParams init_encoder_params(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderParams params;
    params.cfg = cfg;
    Rng rng(Rng::derive(seed, 0xe2c0de));
    detail::InitPlan p{&params.tensors, &rng};

    const size_t d = cfg.embed_dim, dd = cfg.decoder_dim, cells = cfg.patch_cells();
    p.weight("enc.patch.w", cells, d, cells);
    p.zeros("enc.patch.b", 1, d);
    p.weight("enc.pos", cfg.max_patches, d, d);
    for (size_t b = 0; b < cfg.blocks; ++b)
        detail::add_block_tensors(p, "enc.b" + std::to_string(b), d, cfg.heads, cfg.ffn_mult * d);
    p.ones("enc.lnf.g", 1, d);
    p.zeros("enc.lnf.b", 1, d);

    p.weight("dec.proj.w", d, dd, d);
    p.zeros("dec.proj.b", 1, dd);
    p.weight("dec.mask_token", 1, dd, dd);
    p.weight("dec.pos", cfg.max_patches, dd, dd);
    detail::add_block_tensors(p, "dec.b0", dd, cfg.decoder_heads, cfg.ffn_mult * dd);
    p.ones("dec.lnf.g", 1, dd);
    p.zeros("dec.lnf.b", 1, dd);
    p.weight("dec.head.w", dd, cells, dd);
    p.zeros("dec.head.b", 1, cells);
    return params;
}

// ---- tape wiring ----

// Leaf ids of every parameter staged on one tape. Positional tables are
// staged as row slices sized to the sample; gradient shapes follow the slice
// and are padded back to table size by the optimizer plumbing.
struct EncoderBindings {
    const EncoderParams* params = nullptr;
    std::map<std::string, NodeId> leaf;
    size_t staged_pos_rows = 0;
};

inline Matrix slice_rows(const Matrix& m, size_t rows) {
    if (rows > m.rows()) throw ShapeError("slice_rows: want " + std::to_string(rows) + " of " + m.shape_str());
    Matrix out(rows, m.cols());
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
    return out;
}

inline EncoderBindings stage_encoder(Tape& t, const EncoderParams& params, size_t patches, bool frozen = false) {
    if (patches > params.cfg.max_patches)
        throw ShapeError("sample has " + std::to_string(patches) + " patches, positional table holds " +
                         std::to_string(params.cfg.max_patches));
    EncoderBindings b;
    b.params = &params;
    b.staged_pos_rows = patches;
    for (const auto& [name, m] : params.tensors.items) {
        Matrix staged = (name == "enc.pos" || name == "dec.pos") ? slice_rows(m, patches) : m;
        b.leaf[name] = frozen ? t.frozen_param(std::move(staged), name) : t.param(std::move(staged), name);
    }
    return b;
}

namespace detail {

// row-broadcast of a 1×d tensor to n×d via ones(n,1)·b
inline NodeId broadcast_rows(Tape& t, NodeId rowvec, size_t n) {
    return t.matmul(t.constant(Matrix::filled(n, 1, 1.0)), rowvec);
}

inline NodeId layer_norm_affine(Tape& t, NodeId x, NodeId gain, NodeId bias, size_t n) {
    NodeId normed = t.layer_norm_rows(x);
    return t.add(t.elementwise_mul(normed, broadcast_rows(t, gain, n)), broadcast_rows(t, bias, n));
}

// heads concatenated implicitly: sum_h softmax(Q_h K_hᵀ / √dk) V_h Wo_h
inline NodeId attention(Tape& t, const EncoderBindings& b, const std::string& prefix, NodeId x, size_t n,
                        size_t dim, size_t heads) {
    const size_t dk = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    NodeId acc = -1;
    for (size_t h = 0; h < heads; ++h) {
        const std::string hp = prefix + ".attn.h" + std::to_string(h);
        NodeId q = t.matmul(x, b.leaf.at(hp + ".wq"));
        NodeId k = t.matmul(x, b.leaf.at(hp + ".wk"));
        NodeId v = t.matmul(x, b.leaf.at(hp + ".wv"));
        NodeId scores = t.scalar_mul(t.matmul(q, t.transpose(k)), scale);
        NodeId attn = t.matmul(t.softmax_rows(scores), v);
        NodeId proj = t.matmul(attn, b.leaf.at(hp + ".wo"));
        acc = (acc < 0) ? proj : t.add(acc, proj);
    }
    (void)n;
    return acc;
}

inline NodeId transformer_block(Tape& t, const EncoderBindings& b, const std::string& prefix, NodeId x,
                                size_t n, size_t dim, size_t heads) {
    NodeId ln1 = layer_norm_affine(t, x, b.leaf.at(prefix + ".ln1.g"), b.leaf.at(prefix + ".ln1.b"), n);
    NodeId x1 = t.add(x, attention(t, b, prefix, ln1, n, dim, heads));
    NodeId ln2 = layer_norm_affine(t, x1, b.leaf.at(prefix + ".ln2.g"), b.leaf.at(prefix + ".ln2.b"), n);
    NodeId h = t.matmul(ln2, b.leaf.at(prefix + ".ffn.w1"));
    h = t.relu(t.add(h, broadcast_rows(t, b.leaf.at(prefix + ".ffn.b1"), n)));
    h = t.matmul(h, b.leaf.at(prefix + ".ffn.w2"));
    h = t.add(h, broadcast_rows(t, b.leaf.at(prefix + ".ffn.b2"), n));
    return t.add(x1, h);
}

// 0/1 selection matrix picking the rows whose flag matches `want`
inline Matrix selection_matrix(const std::vector<bool>& flags, bool want) {
    size_t count = 0;
    for (bool f : flags) count += (f == want) ? 1 : 0;
    Matrix s(count, flags.size());
    size_t r = 0;
    for (size_t i = 0; i < flags.size(); ++i)
        if (flags[i] == want) s(r++, i) = 1.0;
    return s;
}

inline NodeId mean_rows(Tape& t, NodeId x, size_t n) {
    return t.matmul(t.constant(Matrix::filled(1, n, 1.0 / static_cast<double>(n))), x);
}

}  // namespace detail

struct EncoderForward {
    NodeId pooled = -1;                 // 1×embed_dim, mean over visible tokens of the final states
    std::vector<NodeId> block_pooled;   // per block, 1×embed_dim
    NodeId recon_full = -1;             // P×cells decoder prediction (all positions)
    NodeId ssm = -1;                    // scalar masked-reconstruction MSE
    Matrix target_patches;              // the raw patch values the decoder predicts
    PatchMask mask;
};

// Masked forward pass: the encoder sees visible patches only; the decoder
// reconstructs raw patch values at masked positions. `train` currently only
// documents intent (dropout lives in the projection heads).
inline EncoderForward encoder_forward(Tape& t, const EncoderBindings& b, const Matrix& patches,
                                      const PatchMask& mask, bool train = true) {
    (void)train;
    const EncoderConfig& cfg = b.params->cfg;
    const size_t p = patches.rows();
    if (mask.patches() != p) throw ShapeError("mask size does not match patch count");
    mask.validate();
    if (patches.cols() != cfg.patch_cells()) throw ShapeError("patch row width != patch_h*patch_w");
    if (b.staged_pos_rows != p) throw ShapeError("bindings staged for a different patch count");
    const size_t v = mask.count_visible();
    const size_t d = cfg.embed_dim;

    // visible-token selection as constant matmuls keeps everything on tape
    const Matrix sel_vis = detail::selection_matrix(mask.masked, false);   // V×P
    const Matrix sel_mask = detail::selection_matrix(mask.masked, true);   // M×P

    NodeId all_patches = t.constant(patches);
    NodeId embedded = t.add(t.matmul(all_patches, b.leaf.at("enc.patch.w")),
                            detail::broadcast_rows(t, b.leaf.at("enc.patch.b"), p));
    embedded = t.add(embedded, b.leaf.at("enc.pos"));
    NodeId vis_sel = t.constant(sel_vis);
    NodeId x = t.matmul(vis_sel, embedded);  // V×d

    EncoderForward out;
    out.mask = mask;
    out.target_patches = patches;
    for (size_t blk = 0; blk < cfg.blocks; ++blk) {
        x = detail::transformer_block(t, b, "enc.b" + std::to_string(blk), x, v, d, cfg.heads);
        out.block_pooled.push_back(detail::mean_rows(t, x, v));
    }
    NodeId final_states = detail::layer_norm_affine(t, x, b.leaf.at("enc.lnf.g"), b.leaf.at("enc.lnf.b"), v);
    out.pooled = detail::mean_rows(t, final_states, v);

    // decoder: visible tokens projected down, masked positions get the mask
    // token; both scattered back to raster order, plus decoder positions
    const size_t dd = cfg.decoder_dim;
    NodeId dec_vis = t.add(t.matmul(final_states, b.leaf.at("dec.proj.w")),
                           detail::broadcast_rows(t, b.leaf.at("dec.proj.b"), v));
    NodeId scattered_vis = t.matmul(t.transpose(vis_sel), dec_vis);  // P×dd, zeros at masked rows
    NodeId mask_tokens = detail::broadcast_rows(t, b.leaf.at("dec.mask_token"), mask.count_masked);
    NodeId scattered_mask = t.matmul(t.constant(transpose_values(sel_mask)), mask_tokens);
    NodeId dec_x = t.add(t.add(scattered_vis, scattered_mask), b.leaf.at("dec.pos"));
    dec_x = detail::transformer_block(t, b, "dec.b0", dec_x, p, dd, cfg.decoder_heads);
    dec_x = detail::layer_norm_affine(t, dec_x, b.leaf.at("dec.lnf.g"), b.leaf.at("dec.lnf.b"), p);
    out.recon_full = t.add(t.matmul(dec_x, b.leaf.at("dec.head.w")),
                           detail::broadcast_rows(t, b.leaf.at("dec.head.b"), p));

    // masked-cell MSE
    Matrix cell_mask(p, cfg.patch_cells());
    for (size_t i = 0; i < p; ++i)
        if (mask.masked[i])
            for (size_t j = 0; j < cfg.patch_cells(); ++j) cell_mask(i, j) = 1.0;
    out.ssm = t.square_error_masked(out.recon_full, all_patches, t.constant(cell_mask));
    return out;
}

// Evaluation-mode pass: all patches visible, no decoder. Returns plain
// matrices (no gradients needed).
struct EncoderEmbedding {
    std::vector<double> pooled;                // embed_dim
    std::vector<std::vector<double>> block_pooled;
};

inline EncoderEmbedding encoder_embed(const EncoderParams& params, const Matrix& patches) {
    Tape t;
    EncoderBindings b = stage_encoder(t, params, patches.rows(), /*frozen=*/true);
    const EncoderConfig& cfg = params.cfg;
    const size_t p = patches.rows();
    NodeId all_patches = t.constant(patches);
    NodeId x = t.add(t.matmul(all_patches, b.leaf.at("enc.patch.w")),
                     detail::broadcast_rows(t, b.leaf.at("enc.patch.b"), p));
    x = t.add(x, b.leaf.at("enc.pos"));
    EncoderEmbedding out;
    for (size_t blk = 0; blk < cfg.blocks; ++blk) {
        x = detail::transformer_block(t, b, "enc.b" + std::to_string(blk), x, p, cfg.embed_dim, cfg.heads);
        out.block_pooled.push_back(t.value(detail::mean_rows(t, x, p)).vec());
    }
    NodeId final_states = detail::layer_norm_affine(t, x, b.leaf.at("enc.lnf.g"), b.leaf.at("enc.lnf.b"), p);
    out.pooled = t.value(detail::mean_rows(t, final_states, p)).vec();
    return out;
}

// ---- checkpoint io: "ACENC01\0", u32 version, config block, named tensors ----

inline void save_checkpoint(const std::string& path, const EncoderParams& params,
                            const NamedTensors* extra = nullptr) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    write_magic(f, "ACENC01\0");
    write_u32le(f, 1);  // version
    const EncoderConfig& c = params.cfg;
    std::vector<std::pair<std::string, double>> fields = {
        {"patch_h", static_cast<double>(c.patch_h)},       {"patch_w", static_cast<double>(c.patch_w)},
        {"embed_dim", static_cast<double>(c.embed_dim)},   {"blocks", static_cast<double>(c.blocks)},
        {"heads", static_cast<double>(c.heads)},           {"mask_ratio", c.mask_ratio},
        {"decoder_dim", static_cast<double>(c.decoder_dim)},
        {"decoder_heads", static_cast<double>(c.decoder_heads)},
        {"ffn_mult", static_cast<double>(c.ffn_mult)},     {"max_patches", static_cast<double>(c.max_patches)},
    };
    write_u32le(f, static_cast<uint32_t>(fields.size()));
    for (const auto& [k, v] : fields) {
        write_u32le(f, static_cast<uint32_t>(k.size()));
        f.write(k.data(), static_cast<std::streamsize>(k.size()));
        write_f64le(f, v);
    }
    size_t count = params.tensors.items.size() + (extra ? extra->items.size() : 0);
    write_u32le(f, static_cast<uint32_t>(count));
    auto dump = [&](const NamedTensors& t) {
        for (const auto& [name, m] : t.items) {
            write_u32le(f, static_cast<uint32_t>(name.size()));
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32le(f, static_cast<uint32_t>(m.rows()));
            write_u32le(f, static_cast<uint32_t>(m.cols()));
            for (size_t i = 0; i < m.size(); ++i) write_f64le(f, m[i]);
        }
    };
    dump(params.tensors);
    if (extra) dump(*extra);
    if (!f) throw IoError("write failed: " + path);
}

struct Checkpoint {
    EncoderParams encoder;
    NamedTensors extra;  // tensors outside the encoder namespace (projection heads)
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    expect_magic(f, "ACENC01\0", path);
    const uint32_t version = read_u32le(f);
    if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::map<std::string, double> fields;
    const uint32_t nfields = read_u32le(f);
    for (uint32_t i = 0; i < nfields; ++i) {
        auto key = read_string(f, read_u32le(f));
        fields[key] = read_f64le(f);
    }
    Checkpoint ck;
    EncoderConfig& c = ck.encoder.cfg;
    auto want = [&](const char* k) {
        auto it = fields.find(k);
        if (it == fields.end()) throw FormatError(std::string("checkpoint missing config field ") + k);
        return it->second;
    };
    c.patch_h = static_cast<size_t>(want("patch_h"));
    c.patch_w = static_cast<size_t>(want("patch_w"));
    c.embed_dim = static_cast<size_t>(want("embed_dim"));
    c.blocks = static_cast<size_t>(want("blocks"));
    c.heads = static_cast<size_t>(want("heads"));
    c.mask_ratio = want("mask_ratio");
    c.decoder_dim = static_cast<size_t>(want("decoder_dim"));
    c.decoder_heads = static_cast<size_t>(want("decoder_heads"));
    c.ffn_mult = static_cast<size_t>(want("ffn_mult"));
    c.max_patches = static_cast<size_t>(want("max_patches"));
    c.validate();

    const uint32_t ntensors = read_u32le(f);
    for (uint32_t i = 0; i < ntensors; ++i) {
        auto name = read_string(f, read_u32le(f));
        const uint32_t rows = read_u32le(f);
        const uint32_t cols = read_u32le(f);
        Matrix m(rows, cols);
        for (size_t k = 0; k < m.size(); ++k) m[k] = read_f64le(f);
        if (name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0)
            ck.encoder.tensors.add(name, std::move(m));
        else
            ck.extra.add(name, std::move(m));
    }
    if (!f) throw FormatError("truncated checkpoint: " + path);

    // shape audit against a fresh init of the same config
    EncoderParams reference = init_encoder_params(c, 0);
    for (const auto& [name, m] : reference.tensors.items) {
        if (!ck.encoder.tensors.has(name)) throw FormatError("checkpoint missing tensor " + name);
        const Matrix& got = ck.encoder.tensors.at(name);
        if (!got.same_shape(m))
            throw FormatError("checkpoint tensor " + name + " has shape " + got.shape_str() + ", expected " +
                              m.shape_str());
    }
    return ck;
}

enum class InitMode { Random, FromCheckpoint };

inline EncoderParams init_params(const EncoderConfig& cfg, uint64_t seed, InitMode mode,
                                 const std::string& checkpoint_path = "") {
    if (mode == InitMode::Random) return init_encoder_params(cfg, seed);
    Checkpoint ck = load_checkpoint(checkpoint_path);
    return std::move(ck.encoder);
}

}  // namespace sonalign
