#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sonalign/matrix.hpp"
#include "sonalign/rng.hpp"

namespace sonalign {

// Reverse-mode autodiff over a fixed set of rank-2 operations. A tape is an
// append-only list of nodes; node inputs always reference earlier nodes, so
// replaying forward in index order reproduces values bit for bit.
//
// Randomness (dropout) never lives on the tape: masks are explicit inputs.

enum class Op : uint8_t {
    Leaf,
    Matmul,
    Add,
    Sub,
    ScalarMul,        // x * constant
    ElementwiseMul,
    Recip,            // 1/x elementwise
    Relu,
    DropoutWithMask,  // x ⊙ mask, mask is a non-differentiable input
    MeanAll,          // scalar mean over all cells
    FrobeniusNorm,    // scalar sqrt(sum of squares)
    FrobeniusInner,   // scalar <A,B>_F
    Transpose,
    RowMeanCenter,    // subtract per-column mean taken over rows
    SquareErrorMasked,  // scalar: sum(mask ⊙ (a-b)^2) / sum(mask)
    SoftmaxRows,
    LayerNormRows,    // per-row (x-mean)/sqrt(var+eps), no affine
    RowL2Normalize,
};

using NodeId = int32_t;

struct TapeNode {
    Op op = Op::Leaf;
    NodeId a = -1, b = -1, c = -1;
    double scalar = 0.0;  // ScalarMul constant
    Matrix value;
    bool requires_grad = false;  // trainable leaf
    bool frozen = false;         // leaf explicitly excluded from gradients
    std::string name;            // leaf name, empty for interior nodes
};

struct GradientReport {
    struct Entry {
        std::string name;
        NodeId id = -1;
        Matrix grad;
        bool connected = true;  // false: parameter unreachable from the loss, grad is zero
    };
    std::vector<Entry> entries;  // one per trainable leaf, in creation order
    double max_abs_gradient = 0.0;
    int64_t step_index = -1;

    const Matrix& grad_of(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.grad;
        throw Error("gradient report has no entry named " + name);
    }
};

namespace detail {
inline constexpr double kLayerNormEps = 1e-5;
}

class Tape {
public:
    // ---- leaves ----

    NodeId param(Matrix v, std::string name) {
        TapeNode n;
        n.value = std::move(v);
        n.requires_grad = true;
        n.name = std::move(name);
        return push(std::move(n));
    }

    NodeId frozen_param(Matrix v, std::string name) {
        TapeNode n;
        n.value = std::move(v);
        n.frozen = true;
        n.name = std::move(name);
        return push(std::move(n));
    }

    NodeId constant(Matrix v) {
        TapeNode n;
        n.value = std::move(v);
        return push(std::move(n));
    }

    // ---- operations ----

    NodeId matmul(NodeId a, NodeId b) {
        TapeNode n = interior(Op::Matmul, a, b);
        n.value = matmul_values(value(a), value(b));
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        check_same_shape(value(a), value(b), "add");
        TapeNode n = interior(Op::Add, a, b);
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] += value(b)[i];
        return push(std::move(n));
    }

    NodeId sub(NodeId a, NodeId b) {
        check_same_shape(value(a), value(b), "sub");
        TapeNode n = interior(Op::Sub, a, b);
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] -= value(b)[i];
        return push(std::move(n));
    }

    NodeId scalar_mul(NodeId a, double c) {
        TapeNode n = interior(Op::ScalarMul, a);
        n.scalar = c;
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= c;
        return push(std::move(n));
    }

    NodeId elementwise_mul(NodeId a, NodeId b) {
        check_same_shape(value(a), value(b), "elementwise_mul");
        TapeNode n = interior(Op::ElementwiseMul, a, b);
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= value(b)[i];
        return push(std::move(n));
    }

    NodeId recip(NodeId a) {
        TapeNode n = interior(Op::Recip, a);
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = 1.0 / n.value[i];
        return push(std::move(n));
    }

    NodeId relu(NodeId a) {
        TapeNode n = interior(Op::Relu, a);
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i)
            if (n.value[i] < 0.0) n.value[i] = 0.0;
        return push(std::move(n));
    }

    // mask carries the keep/drop pattern and any inverse-keep scaling; it is
    // produced outside the tape so replay is deterministic
    NodeId dropout_with_mask(NodeId a, NodeId mask) {
        check_same_shape(value(a), value(mask), "dropout_with_mask");
        TapeNode n = interior(Op::DropoutWithMask, a, mask);
        n.value = value(a);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= value(mask)[i];
        return push(std::move(n));
    }

    NodeId mean_all(NodeId a) {
        if (value(a).empty()) throw ShapeError("mean_all of empty matrix");
        TapeNode n = interior(Op::MeanAll, a);
        double s = 0.0;
        for (size_t i = 0; i < value(a).size(); ++i) s += value(a)[i];
        n.value = Matrix(1, 1, {s / static_cast<double>(value(a).size())});
        return push(std::move(n));
    }

    NodeId frobenius_norm(NodeId a) {
        TapeNode n = interior(Op::FrobeniusNorm, a);
        n.value = Matrix(1, 1, {frobenius_norm_values(value(a))});
        return push(std::move(n));
    }

    NodeId frobenius_inner(NodeId a, NodeId b) {
        TapeNode n = interior(Op::FrobeniusInner, a, b);
        n.value = Matrix(1, 1, {frobenius_inner_values(value(a), value(b))});
        return push(std::move(n));
    }

    NodeId transpose(NodeId a) {
        TapeNode n = interior(Op::Transpose, a);
        n.value = transpose_values(value(a));
        return push(std::move(n));
    }

    NodeId row_mean_center(NodeId a) {
        TapeNode n = interior(Op::RowMeanCenter, a);
        n.value = center_rows(value(a));
        return push(std::move(n));
    }

    // mean of (a-b)^2 over cells where mask != 0; mask weights the squared
    // error and its sum is the divisor
    NodeId square_error_masked(NodeId a, NodeId b, NodeId mask) {
        check_same_shape(value(a), value(b), "square_error_masked");
        check_same_shape(value(a), value(mask), "square_error_masked(mask)");
        double wsum = 0.0;
        for (size_t i = 0; i < value(mask).size(); ++i) wsum += value(mask)[i];
        if (wsum <= 0.0) throw ShapeError("square_error_masked: mask selects no cells");
        TapeNode n = interior(Op::SquareErrorMasked, a, b, mask);
        double s = 0.0;
        for (size_t i = 0; i < value(a).size(); ++i) {
            double d = value(a)[i] - value(b)[i];
            s += value(mask)[i] * d * d;
        }
        n.value = Matrix(1, 1, {s / wsum});
        return push(std::move(n));
    }

    NodeId softmax_rows(NodeId a) {
        TapeNode n = interior(Op::SoftmaxRows, a);
        const Matrix& x = value(a);
        Matrix y(x.rows(), x.cols());
        for (size_t r = 0; r < x.rows(); ++r) {
            double mx = x(r, 0);
            for (size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(r, j));
            double z = 0.0;
            for (size_t j = 0; j < x.cols(); ++j) {
                y(r, j) = std::exp(x(r, j) - mx);
                z += y(r, j);
            }
            for (size_t j = 0; j < x.cols(); ++j) y(r, j) /= z;
        }
        n.value = std::move(y);
        return push(std::move(n));
    }

    NodeId layer_norm_rows(NodeId a) {
        TapeNode n = interior(Op::LayerNormRows, a);
        const Matrix& x = value(a);
        Matrix y(x.rows(), x.cols());
        const double d = static_cast<double>(x.cols());
        for (size_t r = 0; r < x.rows(); ++r) {
            double mu = 0.0;
            for (size_t j = 0; j < x.cols(); ++j) mu += x(r, j);
            mu /= d;
            double var = 0.0;
            for (size_t j = 0; j < x.cols(); ++j) {
                double c = x(r, j) - mu;
                var += c * c;
            }
            var /= d;
            double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
            for (size_t j = 0; j < x.cols(); ++j) y(r, j) = (x(r, j) - mu) * inv;
        }
        n.value = std::move(y);
        return push(std::move(n));
    }

    NodeId row_l2_normalize(NodeId a) {
        TapeNode n = interior(Op::RowL2Normalize, a);
        const Matrix& x = value(a);
        Matrix y(x.rows(), x.cols());
        for (size_t r = 0; r < x.rows(); ++r) {
            double s = 0.0;
            for (size_t j = 0; j < x.cols(); ++j) s += x(r, j) * x(r, j);
            if (s == 0.0) throw NumericError("row_l2_normalize: zero row " + std::to_string(r));
            double inv = 1.0 / std::sqrt(s);
            for (size_t j = 0; j < x.cols(); ++j) y(r, j) = x(r, j) * inv;
        }
        n.value = std::move(y);
        return push(std::move(n));
    }

    // ---- access ----

    const Matrix& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const TapeNode& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

    // overwrite a leaf's value (used by replay tests and finite differencing)
    void set_leaf(NodeId id, Matrix v) {
        TapeNode& n = nodes_[static_cast<size_t>(id)];
        if (n.op != Op::Leaf) throw Error("set_leaf on interior node");
        check_same_shape(n.value, v, "set_leaf");
        n.value = std::move(v);
    }

    // Recompute every interior value in index order from current leaf values.
    // With unchanged leaves this reproduces the recorded values bitwise.
    void replay() {
        for (auto& n : nodes_) {
            if (n.op == Op::Leaf) continue;
            n.value = forward_value(n);
        }
    }

    // ---- reverse pass ----

    // General entry point: seed one or more nodes with output gradients and
    // sweep backwards. Seeds for the same node accumulate.
    GradientReport backward_seeded(const std::vector<std::pair<NodeId, Matrix>>& seeds) const {
        std::vector<Matrix> grads(nodes_.size());
        std::vector<bool> touched(nodes_.size(), false);
        for (const auto& [id, seed] : seeds) {
            check_same_shape(value(id), seed, "backward seed");
            accumulate(grads, touched, id, seed);
        }
        for (size_t i = nodes_.size(); i-- > 0;) {
            if (!touched[i]) continue;
            const TapeNode& n = nodes_[i];
            if (n.op == Op::Leaf) continue;
            propagate(n, grads[i], grads, touched);
        }
        GradientReport report;
        for (size_t i = 0; i < nodes_.size(); ++i) {
            const TapeNode& n = nodes_[i];
            if (!n.requires_grad || n.frozen) continue;
            GradientReport::Entry e;
            e.name = n.name;
            e.id = static_cast<NodeId>(i);
            if (touched[i]) {
                e.grad = std::move(grads[i]);
            } else {
                e.grad = Matrix(n.value.rows(), n.value.cols());
                e.connected = false;
            }
            for (size_t k = 0; k < e.grad.size(); ++k)
                report.max_abs_gradient = std::max(report.max_abs_gradient, std::abs(e.grad[k]));
            report.entries.push_back(std::move(e));
        }
        return report;
    }

    // Standard entry point: gradient of a scalar loss with seed 1.
    GradientReport backward(NodeId loss) const {
        if (!value(loss).is_scalar())
            throw ShapeError("backward: loss node must be 1x1, got " + value(loss).shape_str());
        return backward_seeded({{loss, Matrix(1, 1, {1.0})}});
    }

private:
    TapeNode interior(Op op, NodeId a, NodeId b = -1, NodeId c = -1) const {
        check_id(a);
        if (b >= 0) check_id(b);
        if (c >= 0) check_id(c);
        TapeNode n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.c = c;
        return n;
    }

    void check_id(NodeId id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw Error("tape node id out of range");
    }

    NodeId push(TapeNode n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    static Matrix center_rows(const Matrix& x) {
        Matrix y = x;
        if (x.rows() == 0) return y;
        for (size_t j = 0; j < x.cols(); ++j) {
            double mu = 0.0;
            for (size_t i = 0; i < x.rows(); ++i) mu += x(i, j);
            mu /= static_cast<double>(x.rows());
            for (size_t i = 0; i < x.rows(); ++i) y(i, j) -= mu;
        }
        return y;
    }

    Matrix forward_value(const TapeNode& n) const {
        switch (n.op) {
            case Op::Matmul:
                return matmul_values(value(n.a), value(n.b));
            case Op::Add: {
                Matrix y = value(n.a);
                for (size_t i = 0; i < y.size(); ++i) y[i] += value(n.b)[i];
                return y;
            }
            case Op::Sub: {
                Matrix y = value(n.a);
                for (size_t i = 0; i < y.size(); ++i) y[i] -= value(n.b)[i];
                return y;
            }
            case Op::ScalarMul: {
                Matrix y = value(n.a);
                for (size_t i = 0; i < y.size(); ++i) y[i] *= n.scalar;
                return y;
            }
            case Op::ElementwiseMul:
            case Op::DropoutWithMask: {
                Matrix y = value(n.a);
                for (size_t i = 0; i < y.size(); ++i) y[i] *= value(n.b)[i];
                return y;
            }
            case Op::Recip: {
                Matrix y = value(n.a);
                for (size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / y[i];
                return y;
            }
            case Op::Relu: {
                Matrix y = value(n.a);
                for (size_t i = 0; i < y.size(); ++i)
                    if (y[i] < 0.0) y[i] = 0.0;
                return y;
            }
            case Op::MeanAll: {
                double s = 0.0;
                for (size_t i = 0; i < value(n.a).size(); ++i) s += value(n.a)[i];
                return Matrix(1, 1, {s / static_cast<double>(value(n.a).size())});
            }
            case Op::FrobeniusNorm:
                return Matrix(1, 1, {frobenius_norm_values(value(n.a))});
            case Op::FrobeniusInner:
                return Matrix(1, 1, {frobenius_inner_values(value(n.a), value(n.b))});
            case Op::Transpose:
                return transpose_values(value(n.a));
            case Op::RowMeanCenter:
                return center_rows(value(n.a));
            case Op::SquareErrorMasked: {
                double wsum = 0.0, s = 0.0;
                for (size_t i = 0; i < value(n.a).size(); ++i) {
                    double d = value(n.a)[i] - value(n.b)[i];
                    s += value(n.c)[i] * d * d;
                    wsum += value(n.c)[i];
                }
                return Matrix(1, 1, {s / wsum});
            }
            case Op::SoftmaxRows: {
                const Matrix& x = value(n.a);
                Matrix y(x.rows(), x.cols());
                for (size_t r = 0; r < x.rows(); ++r) {
                    double mx = x(r, 0);
                    for (size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(r, j));
                    double z = 0.0;
                    for (size_t j = 0; j < x.cols(); ++j) {
                        y(r, j) = std::exp(x(r, j) - mx);
                        z += y(r, j);
                    }
                    for (size_t j = 0; j < x.cols(); ++j) y(r, j) /= z;
                }
                return y;
            }
            case Op::LayerNormRows: {
                const Matrix& x = value(n.a);
                Matrix y(x.rows(), x.cols());
                const double d = static_cast<double>(x.cols());
                for (size_t r = 0; r < x.rows(); ++r) {
                    double mu = 0.0;
                    for (size_t j = 0; j < x.cols(); ++j) mu += x(r, j);
                    mu /= d;
                    double var = 0.0;
                    for (size_t j = 0; j < x.cols(); ++j) {
                        double c = x(r, j) - mu;
                        var += c * c;
                    }
                    var /= d;
                    double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
                    for (size_t j = 0; j < x.cols(); ++j) y(r, j) = (x(r, j) - mu) * inv;
                }
                return y;
            }
            case Op::RowL2Normalize: {
                const Matrix& x = value(n.a);
                Matrix y(x.rows(), x.cols());
                for (size_t r = 0; r < x.rows(); ++r) {
                    double s = 0.0;
                    for (size_t j = 0; j < x.cols(); ++j) s += x(r, j) * x(r, j);
                    double inv = 1.0 / std::sqrt(s);
                    for (size_t j = 0; j < x.cols(); ++j) y(r, j) = x(r, j) * inv;
                }
                return y;
            }
            case Op::Leaf:
                break;
        }
        throw Error("forward_value: unhandled op");
    }

    static void accumulate(std::vector<Matrix>& grads, std::vector<bool>& touched, NodeId id, const Matrix& g) {
        auto i = static_cast<size_t>(id);
        if (!touched[i]) {
            grads[i] = g;
            touched[i] = true;
        } else {
            for (size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k];
        }
    }

    static void accumulate(std::vector<Matrix>& grads, std::vector<bool>& touched, NodeId id, Matrix&& g) {
        auto i = static_cast<size_t>(id);
        if (!touched[i]) {
            grads[i] = std::move(g);
            touched[i] = true;
        } else {
            for (size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k];
        }
    }

    void propagate(const TapeNode& n, const Matrix& g, std::vector<Matrix>& grads, std::vector<bool>& touched) const {
        // frozen leaves stop gradient flow; plain constants still get a
        // gradient slot but never reach the report
        auto needs = [&](NodeId id) {
            const TapeNode& t = nodes_[static_cast<size_t>(id)];
            return !(t.op == Op::Leaf && t.frozen);
        };
        switch (n.op) {
            case Op::Matmul: {
                if (needs(n.a)) accumulate(grads, touched, n.a, matmul_nt_values(g, value(n.b)));
                if (needs(n.b)) accumulate(grads, touched, n.b, matmul_tn_values(value(n.a), g));
                break;
            }
            case Op::Add:
                if (needs(n.a)) accumulate(grads, touched, n.a, g);
                if (needs(n.b)) accumulate(grads, touched, n.b, g);
                break;
            case Op::Sub: {
                if (needs(n.a)) accumulate(grads, touched, n.a, g);
                if (needs(n.b)) {
                    Matrix ng = g;
                    for (size_t i = 0; i < ng.size(); ++i) ng[i] = -ng[i];
                    accumulate(grads, touched, n.b, ng);
                }
                break;
            }
            case Op::ScalarMul: {
                if (needs(n.a)) {
                    Matrix ga = g;
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] *= n.scalar;
                    accumulate(grads, touched, n.a, ga);
                }
                break;
            }
            case Op::ElementwiseMul: {
                if (needs(n.a)) {
                    Matrix ga = g;
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] *= value(n.b)[i];
                    accumulate(grads, touched, n.a, ga);
                }
                if (needs(n.b)) {
                    Matrix gb = g;
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] *= value(n.a)[i];
                    accumulate(grads, touched, n.b, gb);
                }
                break;
            }
            case Op::DropoutWithMask: {
                // gradient never flows into the mask
                if (needs(n.a)) {
                    Matrix ga = g;
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] *= value(n.b)[i];
                    accumulate(grads, touched, n.a, ga);
                }
                break;
            }
            case Op::Recip: {
                if (needs(n.a)) {
                    Matrix ga = g;
                    const Matrix& y = n.value;  // y = 1/x, d(1/x)/dx = -y^2
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] *= -y[i] * y[i];
                    accumulate(grads, touched, n.a, ga);
                }
                break;
            }
            case Op::Relu: {
                if (needs(n.a)) {
                    Matrix ga = g;
                    for (size_t i = 0; i < ga.size(); ++i)
                        if (value(n.a)[i] <= 0.0) ga[i] = 0.0;
                    accumulate(grads, touched, n.a, ga);
                }
                break;
            }
            case Op::MeanAll: {
                if (needs(n.a)) {
                    double s = g.scalar() / static_cast<double>(value(n.a).size());
                    accumulate(grads, touched, n.a, Matrix::filled(value(n.a).rows(), value(n.a).cols(), s));
                }
                break;
            }
            case Op::FrobeniusNorm: {
                if (needs(n.a)) {
                    double y = n.value.scalar();
                    Matrix ga(value(n.a).rows(), value(n.a).cols());
                    if (y > 0.0) {
                        double s = g.scalar() / y;
                        for (size_t i = 0; i < ga.size(); ++i) ga[i] = s * value(n.a)[i];
                    }
                    accumulate(grads, touched, n.a, ga);
                }
                break;
            }
            case Op::FrobeniusInner: {
                double s = g.scalar();
                if (needs(n.a)) {
                    Matrix ga = value(n.b);
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] *= s;
                    accumulate(grads, touched, n.a, ga);
                }
                if (needs(n.b)) {
                    Matrix gb = value(n.a);
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] *= s;
                    accumulate(grads, touched, n.b, gb);
                }
                break;
            }
            case Op::Transpose:
                if (needs(n.a)) accumulate(grads, touched, n.a, transpose_values(g));
                break;
            case Op::RowMeanCenter: {
                // centering is symmetric and idempotent: grad = center(g)
                if (needs(n.a)) accumulate(grads, touched, n.a, center_rows(g));
                break;
            }
            case Op::SquareErrorMasked: {
                double wsum = 0.0;
                for (size_t i = 0; i < value(n.c).size(); ++i) wsum += value(n.c)[i];
                double s = 2.0 * g.scalar() / wsum;
                if (needs(n.a) || needs(n.b)) {
                    Matrix ga(value(n.a).rows(), value(n.a).cols());
                    for (size_t i = 0; i < ga.size(); ++i)
                        ga[i] = s * value(n.c)[i] * (value(n.a)[i] - value(n.b)[i]);
                    if (needs(n.b)) {
                        Matrix gb = ga;
                        for (size_t i = 0; i < gb.size(); ++i) gb[i] = -gb[i];
                        accumulate(grads, touched, n.b, gb);
                    }
                    if (needs(n.a)) accumulate(grads, touched, n.a, std::move(ga));
                }
                break;
            }
            case Op::SoftmaxRows: {
                if (needs(n.a)) {
                    const Matrix& y = n.value;
                    Matrix ga(y.rows(), y.cols());
                    for (size_t r = 0; r < y.rows(); ++r) {
                        double dot = 0.0;
                        for (size_t j = 0; j < y.cols(); ++j) dot += g(r, j) * y(r, j);
                        for (size_t j = 0; j < y.cols(); ++j) ga(r, j) = y(r, j) * (g(r, j) - dot);
                    }
                    accumulate(grads, touched, n.a, std::move(ga));
                }
                break;
            }
            case Op::LayerNormRows: {
                if (needs(n.a)) {
                    const Matrix& x = value(n.a);
                    const Matrix& y = n.value;
                    const double d = static_cast<double>(x.cols());
                    Matrix ga(x.rows(), x.cols());
                    for (size_t r = 0; r < x.rows(); ++r) {
                        double mu = 0.0;
                        for (size_t j = 0; j < x.cols(); ++j) mu += x(r, j);
                        mu /= d;
                        double var = 0.0;
                        for (size_t j = 0; j < x.cols(); ++j) {
                            double c = x(r, j) - mu;
                            var += c * c;
                        }
                        var /= d;
                        double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
                        double gmean = 0.0, gymean = 0.0;
                        for (size_t j = 0; j < x.cols(); ++j) {
                            gmean += g(r, j);
                            gymean += g(r, j) * y(r, j);
                        }
                        gmean /= d;
                        gymean /= d;
                        for (size_t j = 0; j < x.cols(); ++j)
                            ga(r, j) = inv * (g(r, j) - gmean - y(r, j) * gymean);
                    }
                    accumulate(grads, touched, n.a, std::move(ga));
                }
                break;
            }
            case Op::RowL2Normalize: {
                if (needs(n.a)) {
                    const Matrix& x = value(n.a);
                    const Matrix& y = n.value;
                    Matrix ga(x.rows(), x.cols());
                    for (size_t r = 0; r < x.rows(); ++r) {
                        double norm = 0.0;
                        for (size_t j = 0; j < x.cols(); ++j) norm += x(r, j) * x(r, j);
                        norm = std::sqrt(norm);
                        double dot = 0.0;
                        for (size_t j = 0; j < x.cols(); ++j) dot += g(r, j) * y(r, j);
                        for (size_t j = 0; j < x.cols(); ++j) ga(r, j) = (g(r, j) - y(r, j) * dot) / norm;
                    }
                    accumulate(grads, touched, n.a, std::move(ga));
                }
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    std::vector<TapeNode> nodes_;
};

// Max relative error between reverse-mode gradients and central finite
// differences of `fn`, which must deterministically build a scalar loss from
// the given leaf parameters. All coordinates are probed unless max_coords
// caps them (sampled with the given seed).
struct GradCheckResult {
    double max_rel_error = 0.0;
    size_t coords_checked = 0;
};

inline GradCheckResult grad_check(
    const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& fn,
    std::vector<Matrix> params, double h, uint64_t seed, size_t max_coords_per_param = 0,
    double dead_coord_atol = 1e-9);

namespace detail {
inline double eval_fn(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& fn,
                      const std::vector<Matrix>& params) {
    Tape t;
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) ids.push_back(t.param(params[i], "p" + std::to_string(i)));
    NodeId loss = fn(t, ids);
    double v = t.value(loss).scalar();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
}
}  // namespace detail

inline GradCheckResult grad_check(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& fn,
                                  std::vector<Matrix> params, double h, uint64_t seed,
                                  size_t max_coords_per_param, double dead_coord_atol) {
    if (h <= 0.0) throw NumericError("grad_check: h must be positive");
    Tape t;
    std::vector<NodeId> ids;
    for (size_t i = 0; i < params.size(); ++i) ids.push_back(t.param(params[i], "p" + std::to_string(i)));
    NodeId loss = fn(t, ids);
    if (!std::isfinite(t.value(loss).scalar())) throw NumericError("grad_check: non-finite function value");
    GradientReport report = t.backward(loss);

    Rng rng(Rng::derive(seed, 0x67c4d));
    GradCheckResult res;
    for (size_t p = 0; p < params.size(); ++p) {
        const Matrix& analytic = report.entries[p].grad;
        std::vector<size_t> coords(params[p].size());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
            shuffle(coords, rng);
            coords.resize(max_coords_per_param);
        }
        for (size_t ci : coords) {
            double orig = params[p][ci];
            params[p][ci] = orig + h;
            double fplus = detail::eval_fn(fn, params);
            params[p][ci] = orig - h;
            double fminus = detail::eval_fn(fn, params);
            params[p][ci] = orig;
            double fd = (fplus - fminus) / (2.0 * h);
            // Coordinates where the objective is flat (translation-invariant
            // directions): both routes agree the derivative is zero, but the
            // difference quotient carries eps·|f|/2h rounding jitter which the
            // 1e-8 denominator floor would inflate. Treat both-below-atol as
            // exact agreement.
            double rel = (std::abs(analytic[ci]) <= dead_coord_atol && std::abs(fd) <= dead_coord_atol)
                             ? 0.0
                             : std::abs(analytic[ci] - fd) / std::max(1e-8, std::abs(fd));
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.coords_checked;
        }
    }
    return res;
}

}  // namespace sonalign
