#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "sonalign/encoder.hpp"
#include "sonalign/matrix.hpp"

namespace sonalign {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Linear 0→lr over warmup_steps, then linear lr→0 over the remainder.
inline double lr_at(int64_t step, double peak_lr, int64_t warmup_steps, int64_t total_steps) {
    if (step < 0 || step > total_steps) throw NumericError("lr_at: step out of range");
    if (warmup_steps >= total_steps) throw ConfigError("warmup_steps must be below total steps");
    if (step <= warmup_steps)
        return warmup_steps == 0 ? peak_lr : peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

// Decoupled-weight-decay Adam with bias-corrected moments. State is keyed by
// tensor name; step count is shared across tensors (one optimizer step
// advances t once).
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // applies one update to every (name, grad) pair; missing grads for known
    // params are allowed (e.g. frozen phases) and simply skip the tensor
    void step(NamedTensors& params, const std::map<std::string, Matrix>& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : params.items) {
            auto it = grads.find(name);
            if (it == grads.end()) continue;
            const Matrix& g = it->second;
            check_same_shape(p, g, "adamw");
            if (!g.all_finite()) throw NumericError("adamw: non-finite gradient for " + name);
            auto& [m, v] = state_slot(name, p);
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[i]);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    std::pair<Matrix, Matrix>& state_slot(const std::string& name, const Matrix& like) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_.emplace(name, std::make_pair(Matrix(like.rows(), like.cols()),
                                                     Matrix(like.rows(), like.cols()))).first;
        return it->second;
    }

    AdamWConfig cfg_;
    std::map<std::string, std::pair<Matrix, Matrix>> state_;
    int64_t t_ = 0;
};

// Plain Adam with an additive L2 penalty folded into the gradient (the probe
// trainer's optimizer; distinct from AdamW's decoupled decay).
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(NamedTensors& params, const std::map<std::string, Matrix>& grads, double lr, double l2 = 0.0) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (auto& [name, p] : params.items) {
            auto it = grads.find(name);
            if (it == grads.end()) continue;
            const Matrix& g = it->second;
            auto& [m, v] = state_slot(name, p);
            for (size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i] + l2 * p[i];
                m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
                v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
                p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

private:
    std::pair<Matrix, Matrix>& state_slot(const std::string& name, const Matrix& like) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_.emplace(name, std::make_pair(Matrix(like.rows(), like.cols()),
                                                     Matrix(like.rows(), like.cols()))).first;
        return it->second;
    }

    double b1_, b2_, eps_;
    std::map<std::string, std::pair<Matrix, Matrix>> state_;
    int64_t t_ = 0;
};

}  // namespace sonalign
