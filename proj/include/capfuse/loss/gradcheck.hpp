#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "capfuse/error.hpp"
#include "capfuse/loss/contrastive.hpp"

namespace capfuse {

/// max_k |analytic_k - numeric_k| / max(1, |numeric_k|), where numeric_k is the
/// central difference of `f` along coordinate k of `x`. `x` is restored.
inline double max_relative_fd_error(const std::function<double()>& f, std::span<double> x,
                                    std::span<const double> analytic, double h) {
    if (x.size() != analytic.size()) fail(Errc::ShapeMismatch, "gradient length differs from parameter length");
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        x[k] = saved + h;
        const double up = f();
        x[k] = saved - h;
        const double down = f();
        x[k] = saved;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

/// Checks combined_loss gradients on every image and text coordinate.
inline double finite_diff_check(const Batch& batch, const LossConfig& cfg, double h = 1e-5) {
    if (!(h >= 1e-7 && h <= 1e-3)) fail(Errc::InvalidArgument, "finite-difference step must be in [1e-7, 1e-3]");
    const auto analytic = combined_loss(batch, cfg).grad;
    Batch probe = batch;
    auto total = [&] { return combined_loss(probe, cfg).loss.total; };
    const double e_img = max_relative_fd_error(total, probe.img.flat(), analytic.img.flat(), h);
    const double e_txt = max_relative_fd_error(total, probe.txt.flat(), analytic.txt.flat(), h);
    return std::max(e_img, e_txt);
}

} // namespace capfuse
