#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sonalign/matrix.hpp"
#include "sonalign/optim.hpp"
#include "sonalign/rng.hpp"

namespace sonalign {

// ---- metrics ----

// Probability a random positive outscores a random negative, ties 0.5.
// Midrank computation; numerators are exact multiples of one half, so the
// result equals the O(n²) pairwise count bit for bit.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auroc: length mismatch");
    size_t n1 = 0, n0 = 0;
    for (int l : labels) (l ? n1 : n0)++;
    if (n1 == 0 || n0 == 0) throw NumericError("auroc: needs at least one positive and one negative");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < labels.size(); ++k)
        if (labels[k]) rank_sum_pos += rank[k];
    const double u = rank_sum_pos - static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0;
    return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

// Unweighted mean of one-vs-rest AUROCs. scores: N×C class scores, labels:
// class indices.
inline double macro_auroc(const Matrix& scores, const std::vector<size_t>& labels) {
    if (scores.rows() != labels.size()) throw ShapeError("macro_auroc: length mismatch");
    const size_t classes = scores.cols();
    if (classes < 2) throw ShapeError("macro_auroc: needs at least 2 classes");
    double sum = 0.0;
    size_t counted = 0;
    for (size_t c = 0; c < classes; ++c) {
        std::vector<double> s(scores.rows());
        std::vector<int> y(scores.rows());
        bool has_pos = false, has_neg = false;
        for (size_t r = 0; r < scores.rows(); ++r) {
            s[r] = scores(r, c);
            y[r] = labels[r] == c ? 1 : 0;
            (y[r] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;  // absent class contributes nothing
        sum += auroc(s, y);
        ++counted;
    }
    if (counted == 0) throw NumericError("macro_auroc: no class had both positives and negatives");
    return sum / static_cast<double>(counted);
}

inline double mae(const std::vector<double>& preds, const std::vector<double>& targets) {
    if (preds.size() != targets.size()) throw ShapeError("mae: length mismatch");
    if (preds.empty()) throw NumericError("mae: empty input");
    double s = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
    return s / static_cast<double>(preds.size());
}

// ---- probes on frozen features ----

enum class ProbeHead { Linear, OneHiddenLayer };
enum class ProbeTask { Classification, Regression };

struct ProbeConfig {
    ProbeHead head = ProbeHead::Linear;
    size_t hidden = 64;  // MLP head width
    double lr = 1e-4;
    double l2 = 1e-4;
    double lr_epoch_decay = 0.97;
    int patience = 5;
    int max_epochs = 200;
    double val_fraction = 0.2;
    uint64_t seed = 0;
};

struct ProbeModel {
    ProbeHead head = ProbeHead::Linear;
    ProbeTask task = ProbeTask::Classification;
    size_t classes = 2;
    NamedTensors tensors;
};

namespace detail {

inline Matrix probe_forward(const ProbeModel& m, const Matrix& x, Matrix* hidden_out = nullptr) {
    if (m.head == ProbeHead::Linear) {
        Matrix logits = matmul_values(x, m.tensors.at("w"));
        for (size_t r = 0; r < logits.rows(); ++r)
            for (size_t c = 0; c < logits.cols(); ++c) logits(r, c) += m.tensors.at("b")(0, c);
        return logits;
    }
    Matrix h = matmul_values(x, m.tensors.at("w1"));
    for (size_t r = 0; r < h.rows(); ++r)
        for (size_t c = 0; c < h.cols(); ++c) {
            h(r, c) += m.tensors.at("b1")(0, c);
            if (h(r, c) < 0.0) h(r, c) = 0.0;
        }
    if (hidden_out) *hidden_out = h;
    Matrix logits = matmul_values(h, m.tensors.at("w2"));
    for (size_t r = 0; r < logits.rows(); ++r)
        for (size_t c = 0; c < logits.cols(); ++c) logits(r, c) += m.tensors.at("b2")(0, c);
    return logits;
}

inline Matrix softmax_values(const Matrix& logits) {
    Matrix p = logits;
    for (size_t r = 0; r < p.rows(); ++r) {
        double mx = p(r, 0);
        for (size_t c = 1; c < p.cols(); ++c) mx = std::max(mx, p(r, c));
        double z = 0.0;
        for (size_t c = 0; c < p.cols(); ++c) {
            p(r, c) = std::exp(p(r, c) - mx);
            z += p(r, c);
        }
        for (size_t c = 0; c < p.cols(); ++c) p(r, c) /= z;
    }
    return p;
}

// hand-coded backprop for the probe (kept independent of the tape engine)
inline std::map<std::string, Matrix> probe_gradients(const ProbeModel& m, const Matrix& x,
                                                     const Matrix& dlogits, const Matrix& hidden) {
    std::map<std::string, Matrix> g;
    if (m.head == ProbeHead::Linear) {
        g.emplace("w", matmul_values(transpose_values(x), dlogits));
        Matrix db(1, dlogits.cols());
        for (size_t r = 0; r < dlogits.rows(); ++r)
            for (size_t c = 0; c < dlogits.cols(); ++c) db(0, c) += dlogits(r, c);
        g.emplace("b", std::move(db));
        return g;
    }
    g.emplace("w2", matmul_values(transpose_values(hidden), dlogits));
    Matrix db2(1, dlogits.cols());
    for (size_t r = 0; r < dlogits.rows(); ++r)
        for (size_t c = 0; c < dlogits.cols(); ++c) db2(0, c) += dlogits(r, c);
    g.emplace("b2", std::move(db2));
    Matrix dh = matmul_values(dlogits, transpose_values(m.tensors.at("w2")));
    for (size_t i = 0; i < dh.size(); ++i)
        if (hidden[i] <= 0.0) dh[i] = 0.0;
    g.emplace("w1", matmul_values(transpose_values(x), dh));
    Matrix db1(1, dh.cols());
    for (size_t r = 0; r < dh.rows(); ++r)
        for (size_t c = 0; c < dh.cols(); ++c) db1(0, c) += dh(r, c);
    g.emplace("b1", std::move(db1));
    return g;
}

inline Matrix gather_rows(const Matrix& x, const std::vector<size_t>& idx) {
    Matrix out(idx.size(), x.cols());
    for (size_t i = 0; i < idx.size(); ++i)
        for (size_t c = 0; c < x.cols(); ++c) out(i, c) = x(idx[i], c);
    return out;
}

}  // namespace detail

struct ProbeResult {
    ProbeModel model;  // best-validation checkpoint
    double best_val_metric = 0.0;
    std::vector<double> val_curve;  // per-epoch validation metric
    int epochs_ran = 0;
};

// N×C scores for classification (softmax probabilities), N×1 predictions for
// regression.
inline Matrix probe_scores(const ProbeModel& m, const Matrix& features) {
    Matrix logits = detail::probe_forward(m, features);
    return m.task == ProbeTask::Classification ? detail::softmax_values(logits) : logits;
}

// Trains a shallow head on frozen features with Adam (lr decayed ×0.97 per
// epoch, L2 penalty folded into the gradient), early-stopping after
// `patience` epochs without validation improvement and returning the
// best-validation checkpoint. Features are never modified.
inline ProbeResult train_probe(const Matrix& features, const std::vector<double>& targets, ProbeTask task,
                               size_t classes, const std::vector<size_t>& train_idx,
                               const std::vector<size_t>& val_idx, const ProbeConfig& cfg) {
    if (features.rows() != targets.size()) throw ShapeError("train_probe: features/targets length mismatch");
    {
        std::set<size_t> tr(train_idx.begin(), train_idx.end());
        for (size_t v : val_idx)
            if (tr.count(v)) throw Error("train_probe: train and validation splits overlap");
    }
    const size_t out_dim = task == ProbeTask::Classification ? classes : 1;
    if (task == ProbeTask::Classification) {
        std::set<int> train_classes;
        for (size_t i : train_idx) train_classes.insert(static_cast<int>(targets[i]));
        if (train_classes.size() < 2) throw NumericError("train_probe: single-class training split");
    }

    ProbeModel model;
    model.head = cfg.head;
    model.task = task;
    model.classes = classes;
    {
        Rng rng(Rng::derive(cfg.seed, 0x9b0be));
        detail::InitPlan p{&model.tensors, &rng};
        if (cfg.head == ProbeHead::Linear) {
            p.weight("w", features.cols(), out_dim, features.cols());
            p.zeros("b", 1, out_dim);
        } else {
            p.weight("w1", features.cols(), cfg.hidden, features.cols());
            p.zeros("b1", 1, cfg.hidden);
            p.weight("w2", cfg.hidden, out_dim, cfg.hidden);
            p.zeros("b2", 1, out_dim);
        }
    }

    Matrix xtr = detail::gather_rows(features, train_idx);
    Matrix xval = detail::gather_rows(features, val_idx);
    const auto n = static_cast<double>(train_idx.size());

    auto val_metric = [&](const ProbeModel& m) {
        Matrix scores = probe_scores(m, xval);
        if (task == ProbeTask::Regression) {
            std::vector<double> preds(val_idx.size()), want(val_idx.size());
            for (size_t i = 0; i < val_idx.size(); ++i) {
                preds[i] = scores(i, 0);
                want[i] = targets[val_idx[i]];
            }
            return -mae(preds, want);  // larger is better, uniformly
        }
        std::vector<size_t> want(val_idx.size());
        for (size_t i = 0; i < val_idx.size(); ++i) want[i] = static_cast<size_t>(targets[val_idx[i]]);
        if (classes == 2) {
            std::vector<double> s(val_idx.size());
            std::vector<int> y(val_idx.size());
            for (size_t i = 0; i < val_idx.size(); ++i) {
                s[i] = scores(i, 1);
                y[i] = want[i] == 1 ? 1 : 0;
            }
            return auroc(s, y);
        }
        return macro_auroc(scores, want);
    };

    Adam opt;
    ProbeResult res;
    res.model = model;
    res.best_val_metric = -1e300;
    double lr = cfg.lr;
    int stale = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Matrix hidden;
        Matrix logits = detail::probe_forward(model, xtr, &hidden);
        Matrix dlogits(logits.rows(), logits.cols());
        if (task == ProbeTask::Classification) {
            Matrix p = detail::softmax_values(logits);
            for (size_t r = 0; r < p.rows(); ++r) {
                auto y = static_cast<size_t>(targets[train_idx[r]]);
                for (size_t c = 0; c < p.cols(); ++c) dlogits(r, c) = (p(r, c) - (c == y ? 1.0 : 0.0)) / n;
            }
        } else {
            for (size_t r = 0; r < logits.rows(); ++r) {
                double d = logits(r, 0) - targets[train_idx[r]];
                dlogits(r, 0) = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
            }
        }
        auto grads = detail::probe_gradients(model, xtr, dlogits, hidden);
        opt.step(model.tensors, grads, lr, cfg.l2);
        lr *= cfg.lr_epoch_decay;

        const double metric = val_metric(model);
        res.val_curve.push_back(metric);
        res.epochs_ran = epoch + 1;
        if (metric > res.best_val_metric) {
            res.best_val_metric = metric;
            res.model = model;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    return res;
}

// stratified (per class) seeded split of [0, n) into train/val
inline std::pair<std::vector<size_t>, std::vector<size_t>> stratified_split(
    const std::vector<double>& targets, ProbeTask task, double val_fraction, uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x5917));
    std::map<int, std::vector<size_t>> groups;
    for (size_t i = 0; i < targets.size(); ++i) {
        int g = task == ProbeTask::Classification ? static_cast<int>(targets[i]) : 0;
        groups[g].push_back(i);
    }
    std::vector<size_t> train, val;
    for (auto& [g, idx] : groups) {
        shuffle(idx, rng);
        auto n_val = static_cast<size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
        if (idx.size() >= 2) n_val = std::max<size_t>(1, std::min(n_val, idx.size() - 1));
        for (size_t i = 0; i < idx.size(); ++i) (i < n_val ? val : train).push_back(idx[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

// ---- leave-one-subject-out cross-validation ----

struct LosoResult {
    std::vector<std::pair<std::string, double>> per_subject_mae;
    double mean_mae = 0.0;
};

inline LosoResult loso_cv(const Matrix& features, const std::vector<std::string>& subject_ids,
                          const std::vector<double>& targets, const ProbeConfig& cfg) {
    if (features.rows() != subject_ids.size() || features.rows() != targets.size())
        throw ShapeError("loso_cv: length mismatch");
    std::vector<std::string> subjects;
    for (const auto& s : subject_ids)
        if (std::find(subjects.begin(), subjects.end(), s) == subjects.end()) subjects.push_back(s);
    if (subjects.size() < 2) throw NumericError("loso_cv: needs at least 2 distinct subjects");

    LosoResult res;
    for (const auto& held : subjects) {
        std::vector<size_t> fold_train, fold_test;
        for (size_t i = 0; i < subject_ids.size(); ++i)
            (subject_ids[i] == held ? fold_test : fold_train).push_back(i);

        // validation split carved from the fold's training portion
        std::vector<double> fold_targets;
        for (size_t i : fold_train) fold_targets.push_back(targets[i]);
        auto [tr_local, val_local] =
            stratified_split(fold_targets, ProbeTask::Regression, cfg.val_fraction, cfg.seed);
        std::vector<size_t> tr, val;
        for (size_t i : tr_local) tr.push_back(fold_train[i]);
        for (size_t i : val_local) val.push_back(fold_train[i]);

        auto probe = train_probe(features, targets, ProbeTask::Regression, 1, tr, val, cfg);
        Matrix preds = probe_scores(probe.model, detail::gather_rows(features, fold_test));
        std::vector<double> p(fold_test.size()), want(fold_test.size());
        for (size_t i = 0; i < fold_test.size(); ++i) {
            p[i] = preds(i, 0);
            want[i] = targets[fold_test[i]];
        }
        res.per_subject_mae.emplace_back(held, mae(p, want));
    }
    for (const auto& [s, m] : res.per_subject_mae) res.mean_mae += m;
    res.mean_mae /= static_cast<double>(res.per_subject_mae.size());
    return res;
}

// ---- multi-seed aggregation ----

struct EvalResult {
    std::string metric;
    std::vector<double> per_seed;
    double mean = 0.0;
    std::optional<double> stddev;  // absent below 2 seeds
};

inline EvalResult multi_seed(const std::function<double(uint64_t)>& run_fn,
                             const std::vector<uint64_t>& seeds = {0, 1, 2, 3, 4},
                             const std::string& metric = "metric") {
    if (seeds.empty()) throw ConfigError("multi_seed: need at least one seed");
    EvalResult r;
    r.metric = metric;
    for (uint64_t s : seeds) r.per_seed.push_back(run_fn(s));
    for (double v : r.per_seed) r.mean += v;
    r.mean /= static_cast<double>(r.per_seed.size());
    if (r.per_seed.size() >= 2) {
        double acc = 0.0;
        for (double v : r.per_seed) acc += (v - r.mean) * (v - r.mean);
        r.stddev = std::sqrt(acc / static_cast<double>(r.per_seed.size() - 1));
    }
    return r;
}

}  // namespace sonalign
