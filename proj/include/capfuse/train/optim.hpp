#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "capfuse/error.hpp"

namespace capfuse {

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct OptimState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
};

/// One AdamW update. Decoupled decay theta -= lr * wd * theta is applied
/// before the bias-corrected moment step.
inline void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& state, double lr,
                       const AdamWHyper& h) {
    if (params.size() != grads.size()) fail(Errc::ShapeMismatch, "adamw: params and grads differ in length");
    if (state.m.empty() && state.v.empty() && state.t == 0) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        fail(Errc::ShapeMismatch, "adamw: optimizer state does not match params");

    ++state.t;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= lr * h.weight_decay * params[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grads[i];
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
}

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min = 0.0) {
    if (step > total_steps) fail(Errc::InvalidArgument, "cosine_lr: step beyond total_steps");
    if (total_steps == 0) return lr_max;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

} // namespace capfuse
