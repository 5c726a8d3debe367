#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sonalign/teacher.hpp"

namespace sonalign {

// Exact cosine top-k over unit vectors, immutable after build.

class VectorIndex {
public:
    static VectorIndex build(const std::vector<std::pair<std::string, std::vector<double>>>& entries) {
        if (entries.empty()) throw Error("cannot build an empty index");
        VectorIndex idx;
        idx.dim_ = entries[0].second.size();
        std::set<std::string> seen;
        for (const auto& [id, vec] : entries) {
            if (vec.size() != idx.dim_)
                throw ShapeError("index entry '" + id + "' has dim " + std::to_string(vec.size()) +
                                 ", expected " + std::to_string(idx.dim_));
            if (!seen.insert(id).second) throw Error("duplicate id in index: '" + id + "'");
            double norm = 0.0;
            for (double v : vec) norm += v * v;
            if (norm == 0.0) throw NumericError("zero vector for id '" + id + "'");
            std::vector<double> unit = vec;
            const double inv = 1.0 / std::sqrt(norm);
            for (double& v : unit) v *= inv;
            idx.ids_.push_back(id);
            idx.vectors_.push_back(std::move(unit));
        }
        return idx;
    }

    size_t dim() const { return dim_; }
    size_t count() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<double>& vector_of(size_t i) const { return vectors_[i]; }

private:
    size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::vector<double>> vectors_;
};

struct ScoredId {
    std::string id;
    double score = 0.0;
};

// Descending cosine; ties broken by ascending id.
inline std::vector<ScoredId> topk(const VectorIndex& index, const std::vector<double>& query, size_t k) {
    if (query.size() != index.dim()) throw ShapeError("query dim does not match index");
    if (k == 0 || k > index.count())
        throw Error("k=" + std::to_string(k) + " out of range for index of " + std::to_string(index.count()));
    double qn = 0.0;
    for (double v : query) qn += v * v;
    if (qn == 0.0) throw NumericError("zero query vector");
    const double inv = 1.0 / std::sqrt(qn);

    std::vector<size_t> order(index.count());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> score(index.count());
    for (size_t i = 0; i < index.count(); ++i) {
        double dot = 0.0;
        const auto& v = index.vector_of(i);
        for (size_t d = 0; d < v.size(); ++d) dot += v[d] * query[d];
        score[i] = dot * inv;
    }
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return index.ids()[a] < index.ids()[b];
    });
    std::vector<ScoredId> out;
    for (size_t i = 0; i < k; ++i) out.push_back({index.ids()[order[i]], score[order[i]]});
    return out;
}

// ---- zero-shot retrieval classification ----

enum class ZeroShotAggregation { MeanEmbedding, MajorityVote };

struct ZeroShotConfig {
    size_t k = 5;
    ZeroShotAggregation aggregation = ZeroShotAggregation::MeanEmbedding;
    std::vector<std::string> class_names;
};

struct ZeroShotResult {
    std::string label;
    std::vector<double> class_scores;  // aligned with cfg.class_names
    std::vector<ScoredId> retrieved;
};

// (i) the caller extracts the clip's embedding, (ii) retrieve the top-k
// entries, (iii) re-embed the retrieved report texts and the class names
// with the text embedder, (iv) assign the class whose name-embedding is most
// similar. Uses no task labels anywhere.
inline ZeroShotResult zeroshot_classify(const std::vector<double>& clip_embedding, const VectorIndex& index,
                                        const std::map<std::string, std::string>& report_texts,
                                        const ZeroShotConfig& cfg, TeacherProvider& text_embedder) {
    if (cfg.class_names.size() < 2) throw ConfigError("zero-shot needs at least 2 class names");
    if (cfg.k == 0) throw ConfigError("zero-shot needs k >= 1");
    ZeroShotResult res;
    res.retrieved = topk(index, clip_embedding, std::min(cfg.k, index.count()));

    std::vector<std::vector<double>> class_vecs;
    for (const auto& name : cfg.class_names) class_vecs.push_back(text_embedder.embed("", name).vector);

    std::vector<std::vector<double>> report_vecs;
    for (const auto& hit : res.retrieved) {
        auto it = report_texts.find(hit.id);
        if (it == report_texts.end()) throw Error("retrieved id '" + hit.id + "' has no report text");
        report_vecs.push_back(text_embedder.embed(hit.id, it->second).vector);
    }

    auto mean_embedding_scores = [&]() {
        std::vector<double> mean(text_embedder.dim(), 0.0);
        for (const auto& v : report_vecs)
            for (size_t d = 0; d < v.size(); ++d) mean[d] += v[d];
        for (double& x : mean) x /= static_cast<double>(report_vecs.size());
        std::vector<double> scores;
        for (const auto& cv : class_vecs) scores.push_back(cosine(mean, cv));
        return scores;
    };

    if (cfg.aggregation == ZeroShotAggregation::MeanEmbedding) {
        res.class_scores = mean_embedding_scores();
    } else {
        // each retrieved report votes for its nearest class name
        std::vector<double> votes(cfg.class_names.size(), 0.0);
        for (const auto& v : report_vecs) {
            size_t best = 0;
            double best_score = -2.0;
            for (size_t c = 0; c < class_vecs.size(); ++c) {
                double s = cosine(v, class_vecs[c]);
                if (s > best_score) {
                    best_score = s;
                    best = c;
                }
            }
            votes[best] += 1.0;
        }
        for (double& v : votes) v /= static_cast<double>(report_vecs.size());
        // tied majority falls back to the mean-embedding decision
        double top = *std::max_element(votes.begin(), votes.end());
        size_t winners = 0;
        for (double v : votes) winners += (v == top) ? 1 : 0;
        if (winners > 1) {
            auto mean_scores = mean_embedding_scores();
            for (size_t c = 0; c < votes.size(); ++c)
                if (votes[c] == top) votes[c] += 1e-9 * mean_scores[c];
        }
        res.class_scores = votes;
    }

    size_t best = 0;
    for (size_t c = 1; c < res.class_scores.size(); ++c)
        if (res.class_scores[c] > res.class_scores[best]) best = c;
    res.label = cfg.class_names[best];
    return res;
}

}  // namespace sonalign
