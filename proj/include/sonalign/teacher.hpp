#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sonalign/common.hpp"
#include "sonalign/sha256.hpp"

namespace sonalign {

// The frozen language model reduced to its observable contract: text in,
// unit-norm vector out. Three providers share it — a deterministic hashed
// embedder (offline default), precomputed files, and a remote endpoint.

enum class TeacherSource { Hashed, File, Remote };

struct TeacherEmbedding {
    std::vector<double> vector;  // unit L2 norm
    TeacherSource source = TeacherSource::Hashed;
    std::string text_digest;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

inline std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed) {
    uint64_t h = 1469598103934665603ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline void normalize_l2(std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    if (s == 0.0) throw NumericError("cannot normalize a zero embedding");
    double inv = 1.0 / std::sqrt(s);
    for (double& x : v) x *= inv;
}

}  // namespace detail

// Signed feature hashing of lowercase word unigrams and bigrams into `dim`
// buckets, L2-normalized. Deterministic per (text, seed). Preserves
// token-overlap structure, which is what alignment consumes.
inline TeacherEmbedding hash_embed(const std::string& text, size_t dim = 2048, uint64_t seed = 0) {
    auto tokens = detail::word_tokens(text);
    if (tokens.empty()) throw Error("hash_embed: empty text");
    std::vector<double> v(dim, 0.0);
    auto put = [&](const std::string& feature) {
        uint64_t h = detail::fnv1a64(feature, seed);
        size_t bucket = static_cast<size_t>(h % dim);
        double sign = ((h >> 63) & 1) ? 1.0 : -1.0;
        v[bucket] += sign;
    };
    for (const auto& t : tokens) put(t);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) put(tokens[i] + " " + tokens[i + 1]);
    detail::normalize_l2(v);
    TeacherEmbedding e;
    e.vector = std::move(v);
    e.source = TeacherSource::Hashed;
    e.text_digest = sha256_hex(text);
    return e;
}

// ---- embedding file: "ACEMB01\0", u32 dim, u32 count,
//      then per record (u32 id-length, id bytes, dim × f32 LE) ----

inline void save_embeddings(const std::string& path,
                            const std::vector<std::pair<std::string, std::vector<double>>>& entries, size_t dim) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    write_magic(f, "ACEMB01\0");
    write_u32le(f, static_cast<uint32_t>(dim));
    write_u32le(f, static_cast<uint32_t>(entries.size()));
    for (const auto& [id, vec] : entries) {
        if (vec.size() != dim)
            throw ShapeError("embedding for id '" + id + "' has dim " + std::to_string(vec.size()) +
                             ", expected " + std::to_string(dim));
        write_u32le(f, static_cast<uint32_t>(id.size()));
        f.write(id.data(), static_cast<std::streamsize>(id.size()));
        for (double x : vec) write_f32le(f, static_cast<float>(x));
    }
    if (!f) throw IoError("write failed: " + path);
}

struct LoadedEmbeddings {
    size_t dim = 0;
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    size_t renormalized_count = 0;  // stored vectors that were off unit norm
};

inline LoadedEmbeddings load_embeddings(const std::string& path, size_t expected_dim = 0,
                                        bool renormalize = true) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    expect_magic(f, "ACEMB01\0", path);
    LoadedEmbeddings out;
    out.dim = read_u32le(f);
    if (expected_dim != 0 && out.dim != expected_dim)
        throw FormatError("embedding file dim " + std::to_string(out.dim) + " != expected " +
                          std::to_string(expected_dim) + ": " + path);
    const uint32_t count = read_u32le(f);
    std::map<std::string, bool> seen;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t idlen = read_u32le(f);
        std::string id = read_string(f, idlen);
        if (seen.count(id)) throw FormatError("duplicate id '" + id + "' in " + path);
        seen[id] = true;
        std::vector<double> v(out.dim);
        for (size_t k = 0; k < out.dim; ++k) v[k] = static_cast<double>(read_f32le(f));
        if (renormalize) {
            double s = 0.0;
            for (double x : v) s += x * x;
            if (std::abs(std::sqrt(s) - 1.0) > 1e-6) ++out.renormalized_count;
            detail::normalize_l2(v);
        }
        out.entries.emplace_back(std::move(id), std::move(v));
    }
    if (!f) throw FormatError("truncated embedding file: " + path);
    return out;
}

// ---- remote provider ----

// Transport: request body in, response body out; throws RemoteError on
// transport failure. The HTTP implementation lives with the CLI so this
// header stays socket-free; tests inject functors.
using RemoteTransport = std::function<std::string(const std::string& request_json)>;

struct RemoteConfig {
    size_t dim = 2048;
    size_t max_batch = 16;
    int max_retries = 2;
    int backoff_ms = 100;  // doubled per retry; sleeping is skipped when 0
    std::string cache_dir;  // empty disables the disk cache
};

class RemoteTeacher {
public:
    RemoteTeacher(RemoteConfig cfg, RemoteTransport transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {
        if (!cfg_.cache_dir.empty()) std::filesystem::create_directories(cfg_.cache_dir);
    }

    // One vector per text, order preserved. Cached texts are served without
    // touching the transport.
    std::vector<TeacherEmbedding> fetch(const std::vector<std::string>& texts) {
        std::vector<TeacherEmbedding> out(texts.size());
        std::vector<size_t> missing;
        for (size_t i = 0; i < texts.size(); ++i) {
            auto digest = sha256_hex(texts[i]);
            if (auto cached = read_cache(digest)) {
                out[i].vector = std::move(*cached);
                out[i].source = TeacherSource::Remote;
                out[i].text_digest = digest;
            } else {
                missing.push_back(i);
            }
        }
        for (size_t start = 0; start < missing.size(); start += cfg_.max_batch) {
            const size_t stop = std::min(missing.size(), start + cfg_.max_batch);
            std::vector<std::string> batch;
            for (size_t k = start; k < stop; ++k) batch.push_back(texts[missing[k]]);
            auto vecs = fetch_batch(batch);
            for (size_t k = start; k < stop; ++k) {
                size_t idx = missing[k];
                auto digest = sha256_hex(texts[idx]);
                // cache stores f32; serve the same quantize→renormalize result
                // a later cache hit would produce, so values never depend on
                // whether they came from the wire or the disk
                write_cache(digest, vecs[k - start]);
                for (double& x : vecs[k - start]) x = static_cast<double>(static_cast<float>(x));
                detail::normalize_l2(vecs[k - start]);
                out[idx].vector = std::move(vecs[k - start]);
                out[idx].source = TeacherSource::Remote;
                out[idx].text_digest = digest;
            }
        }
        return out;
    }

private:
    std::vector<std::vector<double>> fetch_batch(const std::vector<std::string>& texts) {
        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0 && cfg_.backoff_ms > 0) {
                auto ms = cfg_.backoff_ms * (1 << (attempt - 1));
                std::this_thread::sleep_for(std::chrono::milliseconds(ms));
            }
            try {
                return try_fetch_batch(texts);
            } catch (const RemoteError& e) {
                last_error = e.what();
            }
        }
        throw RemoteError("remote teacher failed after " + std::to_string(cfg_.max_retries + 1) +
                          " attempts: " + last_error);
    }

    std::vector<std::vector<double>> try_fetch_batch(const std::vector<std::string>& texts) {
        nlohmann::json req;
        req["texts"] = texts;
        std::string body = transport_(req.dump());
        nlohmann::json resp;
        try {
            resp = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw RemoteError(std::string("malformed response: ") + e.what());
        }
        if (!resp.contains("embeddings") || !resp["embeddings"].is_array())
            throw RemoteError("malformed response: missing 'embeddings' array");
        const auto& arr = resp["embeddings"];
        if (arr.size() != texts.size())
            throw RemoteError("protocol error: got " + std::to_string(arr.size()) + " embeddings for " +
                              std::to_string(texts.size()) + " texts");
        std::vector<std::vector<double>> out;
        for (const auto& item : arr) {
            if (!item.is_array())
                throw RemoteError("malformed response: embedding entry is not an array");
            std::vector<double> v = item.get<std::vector<double>>();
            if (v.size() != cfg_.dim)
                throw RemoteError("dimension error: endpoint returned dim " + std::to_string(v.size()) +
                                  ", configured " + std::to_string(cfg_.dim));
            detail::normalize_l2(v);
            out.push_back(std::move(v));
        }
        return out;
    }

    std::optional<std::vector<double>> read_cache(const std::string& digest) {
        if (cfg_.cache_dir.empty()) return std::nullopt;
        auto path = std::filesystem::path(cfg_.cache_dir) / (digest + ".f32vec");
        std::ifstream f(path, std::ios::binary);
        if (!f) return std::nullopt;
        uint32_t dim = read_u32le(f);
        if (dim != cfg_.dim) return std::nullopt;  // stale cache from another config
        std::vector<double> v(dim);
        for (auto& x : v) x = static_cast<double>(read_f32le(f));
        if (!f) return std::nullopt;
        detail::normalize_l2(v);
        return v;
    }

    void write_cache(const std::string& digest, const std::vector<double>& v) {
        if (cfg_.cache_dir.empty()) return;
        auto path = std::filesystem::path(cfg_.cache_dir) / (digest + ".f32vec");
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) return;
        write_u32le(f, static_cast<uint32_t>(v.size()));
        for (double x : v) write_f32le(f, static_cast<float>(x));
    }

    RemoteConfig cfg_;
    RemoteTransport transport_;
};

// ---- uniform provider interface used by alignment and retrieval ----

// embed(id, text): the hashed and remote providers key on text, the file
// provider keys on id. All return unit vectors of the same dimension, so a
// report embeds identically everywhere it appears.
class TeacherProvider {
public:
    virtual ~TeacherProvider() = default;
    virtual size_t dim() const = 0;
    virtual TeacherEmbedding embed(const std::string& id, const std::string& text) = 0;
};

class HashedTeacher final : public TeacherProvider {
public:
    explicit HashedTeacher(size_t dim = 2048, uint64_t seed = 0) : dim_(dim), seed_(seed) {}
    size_t dim() const override { return dim_; }
    TeacherEmbedding embed(const std::string&, const std::string& text) override {
        return hash_embed(text, dim_, seed_);
    }

private:
    size_t dim_;
    uint64_t seed_;
};

class FileTeacher final : public TeacherProvider {
public:
    explicit FileTeacher(const std::string& path, size_t expected_dim = 0) {
        auto loaded = load_embeddings(path, expected_dim);
        dim_ = loaded.dim;
        for (auto& [id, vec] : loaded.entries) by_id_.emplace(std::move(id), std::move(vec));
    }
    size_t dim() const override { return dim_; }
    TeacherEmbedding embed(const std::string& id, const std::string&) override {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw Error("no precomputed embedding for id '" + id + "'");
        TeacherEmbedding e;
        e.vector = it->second;
        e.source = TeacherSource::File;
        e.text_digest = id;
        return e;
    }

private:
    size_t dim_ = 0;
    std::map<std::string, std::vector<double>> by_id_;
};

class RemoteTeacherProvider final : public TeacherProvider {
public:
    RemoteTeacherProvider(RemoteConfig cfg, RemoteTransport transport)
        : dim_(cfg.dim), client_(std::move(cfg), std::move(transport)) {}
    size_t dim() const override { return dim_; }
    TeacherEmbedding embed(const std::string&, const std::string& text) override {
        return client_.fetch({text})[0];
    }

private:
    size_t dim_;
    RemoteTeacher client_;
};

}  // namespace sonalign
