#pragma once

#include <algorithm>

#include "sonalign/tape.hpp"

namespace sonalign {

// Representation-structure similarity between two batches of embeddings and
// the losses built on it.
//
// SampleGram compares B×B Gram matrices of the centered rows (the form whose
// invariances include orthogonal rotations of either feature space);
// FeatureGram compares d×d feature Grams (scale-invariant only). Both share
// the centered-Gram cosine formula.

enum class CkaMode { SampleGram, FeatureGram };
enum class AlignLossKind { Cka, Mse };

inline const char* cka_mode_name(CkaMode m) { return m == CkaMode::SampleGram ? "sample" : "feature"; }
inline const char* align_loss_name(AlignLossKind k) { return k == AlignLossKind::Cka ? "cka" : "mse"; }

// Tape version: the raw ratio (no clamping, so gradients stay exact).
inline NodeId cka_node(Tape& t, NodeId ha, NodeId hl, CkaMode mode) {
    const Matrix& a = t.value(ha);
    const Matrix& l = t.value(hl);
    if (a.rows() != l.rows()) throw ShapeError("cka: batch sizes differ");
    if (a.rows() < 2) throw ShapeError("cka: needs a batch of at least 2");
    NodeId ca = t.row_mean_center(ha);
    NodeId cl = t.row_mean_center(hl);
    NodeId ga, gl;
    if (mode == CkaMode::SampleGram) {
        ga = t.matmul(ca, t.transpose(ca));  // B×B
        gl = t.matmul(cl, t.transpose(cl));
    } else {
        ga = t.matmul(t.transpose(ca), ca);  // d×d
        gl = t.matmul(t.transpose(cl), cl);
    }
    NodeId na = t.frobenius_norm(ga);
    NodeId nl = t.frobenius_norm(gl);
    if (t.value(na).scalar() == 0.0 || t.value(nl).scalar() == 0.0)
        throw NumericError("cka: degenerate batch (zero centered Gram)");
    NodeId inner = t.frobenius_inner(ga, gl);
    return t.elementwise_mul(inner, t.recip(t.elementwise_mul(na, nl)));
}

// Value version with the [0,1] clamp for reporting.
inline double cka(const Matrix& ha, const Matrix& hl, CkaMode mode) {
    Tape t;
    NodeId v = cka_node(t, t.constant(ha), t.constant(hl), mode);
    return std::clamp(t.value(v).scalar(), 0.0, 1.0);
}

// Cka kind: 1 − cka. Mse kind: mean squared difference of row-L2-normalized
// embeddings.
inline NodeId align_loss_node(Tape& t, NodeId ha, NodeId hl, CkaMode mode, AlignLossKind kind) {
    if (kind == AlignLossKind::Cka) {
        NodeId one = t.constant(Matrix(1, 1, {1.0}));
        return t.sub(one, cka_node(t, ha, hl, mode));
    }
    NodeId na = t.row_l2_normalize(ha);
    NodeId nl = t.row_l2_normalize(hl);
    NodeId diff = t.sub(na, nl);
    return t.mean_all(t.elementwise_mul(diff, diff));
}

inline double align_loss(const Matrix& ha, const Matrix& hl, CkaMode mode, AlignLossKind kind) {
    Tape t;
    return t.value(align_loss_node(t, t.constant(ha), t.constant(hl), mode, kind)).scalar();
}

// λa·align + λs·ssm
inline double total_loss(double align, double ssm, double lambda_align, double lambda_ssm) {
    if (lambda_align < 0.0 || lambda_ssm < 0.0) throw ConfigError("loss weights must be nonnegative");
    return lambda_align * align + lambda_ssm * ssm;
}

}  // namespace sonalign
