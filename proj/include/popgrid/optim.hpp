#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "popgrid/error.hpp"

namespace popgrid {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    // false: L2 term added to the gradient (classic Adam); true: AdamW-style shrinkage.
    bool decoupled_weight_decay = false;
};

struct OptimState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::uint64_t t = 0;
};

inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimState& state, double lr,
                      const AdamConfig& cfg) {
    if (grads.size() != params.size()) throw DataError("adam_step: gradient/parameter shape mismatch");
    if (state.t == 0 && state.m.size() == 0) {
        state.m = Eigen::VectorXd::Zero(params.size());
        state.v = Eigen::VectorXd::Zero(params.size());
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DataError("adam_step: optimizer state shape mismatch");
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        double g = grads(i);
        if (!cfg.decoupled_weight_decay) g += cfg.weight_decay * params(i);
        state.m(i) = cfg.beta1 * state.m(i) + (1.0 - cfg.beta1) * g;
        state.v(i) = cfg.beta2 * state.v(i) + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m(i) / c1;
        const double vhat = state.v(i) / c2;
        if (cfg.decoupled_weight_decay) params(i) -= lr * cfg.weight_decay * params(i);
        params(i) -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

// Step decay: base_lr * decay^floor(epoch / every).
inline double lr_at(std::size_t epoch, double base_lr, double decay = 0.75, std::size_t every = 5) {
    return base_lr * std::pow(decay, static_cast<double>(epoch / (every == 0 ? 1 : every)));
}

}  // namespace popgrid
