#pragma once

#include <cstdint>
#include <string>

#include "sonalign/encoder.hpp"
#include "sonalign/rng.hpp"
#include "sonalign/tape.hpp"

namespace sonalign {

// Two-layer MLP head mapping encoder outputs into the shared space:
// in → hidden (ReLU, dropout) → out. Audio side 384→1024→512, language side
// 2048→1024→512.

struct ProjectionConfig {
    size_t in_dim = 384;
    size_t hidden_dim = 1024;
    size_t out_dim = 512;
    double dropout = 0.2;
};

inline NamedTensors init_projection(const ProjectionConfig& cfg, const std::string& prefix, uint64_t seed) {
    NamedTensors t;
    uint64_t tag = 0x9d7;
    for (char c : prefix) tag = tag * 1099511628211ULL + static_cast<unsigned char>(c);
    Rng rng(Rng::derive(seed, tag));
    detail::InitPlan p{&t, &rng};
    p.weight(prefix + ".w1", cfg.in_dim, cfg.hidden_dim, cfg.in_dim);
    p.zeros(prefix + ".b1", 1, cfg.hidden_dim);
    p.weight(prefix + ".w2", cfg.hidden_dim, cfg.out_dim, cfg.hidden_dim);
    p.zeros(prefix + ".b2", 1, cfg.out_dim);
    return t;
}

// inverted-dropout mask: keep with probability 1-p at scale 1/(1-p)
inline Matrix make_dropout_mask(size_t rows, size_t cols, double p, Rng& rng) {
    Matrix m(rows, cols);
    const double scale = 1.0 / (1.0 - p);
    for (size_t i = 0; i < m.size(); ++i) m[i] = (rng.next_double() >= p) ? scale : 0.0;
    return m;
}

struct ProjectionBindings {
    NodeId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    ProjectionConfig cfg;
};

inline ProjectionBindings stage_projection(Tape& t, const NamedTensors& tensors, const std::string& prefix,
                                           const ProjectionConfig& cfg, bool frozen = false) {
    ProjectionBindings b;
    b.cfg = cfg;
    auto leaf = [&](const std::string& name) {
        return frozen ? t.frozen_param(tensors.at(name), name) : t.param(tensors.at(name), name);
    };
    b.w1 = leaf(prefix + ".w1");
    b.b1 = leaf(prefix + ".b1");
    b.w2 = leaf(prefix + ".w2");
    b.b2 = leaf(prefix + ".b2");
    return b;
}

// layer2(dropout(relu(layer1(x)))) per row; dropout mask required in train
// mode, ignored otherwise
inline NodeId project(Tape& t, const ProjectionBindings& b, NodeId inputs, bool train,
                      const Matrix* dropout_mask = nullptr) {
    const size_t n = t.value(inputs).rows();
    if (t.value(inputs).cols() != b.cfg.in_dim)
        throw ShapeError("projection input dim " + std::to_string(t.value(inputs).cols()) + " != " +
                         std::to_string(b.cfg.in_dim));
    NodeId h = t.add(t.matmul(inputs, b.w1), detail::broadcast_rows(t, b.b1, n));
    h = t.relu(h);
    if (train && b.cfg.dropout > 0.0) {
        if (dropout_mask == nullptr) throw Error("projection in train mode needs an explicit dropout mask");
        check_same_shape(t.value(h), *dropout_mask, "projection dropout mask");
        h = t.dropout_with_mask(h, t.constant(*dropout_mask));
    }
    return t.add(t.matmul(h, b.w2), detail::broadcast_rows(t, b.b2, n));
}

// convenience for evaluation paths: run the head on plain values
inline Matrix project_values(const NamedTensors& tensors, const std::string& prefix,
                             const ProjectionConfig& cfg, const Matrix& inputs) {
    Tape t;
    ProjectionBindings b = stage_projection(t, tensors, prefix, cfg, /*frozen=*/true);
    NodeId out = project(t, b, t.constant(inputs), /*train=*/false);
    return t.value(out);
}

}  // namespace sonalign
