#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "capfuse/error.hpp"
#include "capfuse/linalg.hpp"

namespace capfuse {

enum class Tower { Image, Text };

/// Per-tower affine maps v -> W v + b over frozen embeddings.
///
/// Storage is one flat vector laid out as [W_img | b_img | W_txt | b_txt],
/// W row-major d x d, so each tower's block is a contiguous span that the
/// optimizer can update on its own.
class AdapterParams {
public:
    AdapterParams() = default;

    static AdapterParams identity(std::size_t dim) {
        if (dim == 0) fail(Errc::InvalidArgument, "adapter dim must be positive");
        AdapterParams p;
        p.dim_ = dim;
        p.values_.assign(2 * block_size(dim), 0.0);
        for (Tower t : {Tower::Image, Tower::Text}) {
            auto w = p.weight(t);
            for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
        }
        return p;
    }

    static AdapterParams from_values(std::size_t dim, std::vector<double> values) {
        if (values.size() != 2 * block_size(dim)) fail(Errc::ShapeMismatch, "adapter parameter count mismatch");
        for (double v : values)
            if (!std::isfinite(v)) fail(Errc::InvalidArgument, "adapter parameters must be finite");
        AdapterParams p;
        p.dim_ = dim;
        p.values_ = std::move(values);
        return p;
    }

    static std::size_t block_size(std::size_t dim) { return dim * dim + dim; }

    std::size_t dim() const noexcept { return dim_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    std::span<double> block(Tower t) { return values().subspan(offset(t), block_size(dim_)); }
    std::span<const double> block(Tower t) const { return values().subspan(offset(t), block_size(dim_)); }
    std::span<double> weight(Tower t) { return block(t).first(dim_ * dim_); }
    std::span<const double> weight(Tower t) const { return block(t).first(dim_ * dim_); }
    std::span<double> bias(Tower t) { return block(t).subspan(dim_ * dim_); }
    std::span<const double> bias(Tower t) const { return block(t).subspan(dim_ * dim_); }

    template <std::floating_point T>
    std::vector<double> apply(Tower t, std::span<const T> x) const {
        if (x.size() != dim_) fail(Errc::DimMismatch, "adapter input dim mismatch");
        const auto w = weight(t);
        const auto b = bias(t);
        std::vector<double> out(dim_);
        for (std::size_t r = 0; r < dim_; ++r) {
            double s = b[r];
            for (std::size_t c = 0; c < dim_; ++c) s += w[r * dim_ + c] * static_cast<double>(x[c]);
            out[r] = s;
        }
        return out;
    }

    Mat apply_rows(Tower t, const Mat& x) const {
        Mat out(x.rows(), dim_);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto y = apply(t, x.row(r));
            std::copy(y.begin(), y.end(), out.row(r).begin());
        }
        return out;
    }

    /// Accumulates dL/dW = G^T X and dL/db = sum of G rows into `grad`'s block.
    void accumulate_grad(Tower t, const Mat& inputs, const Mat& grad_out, AdapterParams& grad) const {
        auto gw = grad.weight(t);
        auto gb = grad.bias(t);
        for (std::size_t n = 0; n < inputs.rows(); ++n)
            for (std::size_t r = 0; r < dim_; ++r) {
                const double g = grad_out(n, r);
                gb[r] += g;
                for (std::size_t c = 0; c < dim_; ++c) gw[r * dim_ + c] += g * inputs(n, c);
            }
    }

    AdapterParams zeros_like() const {
        AdapterParams z;
        z.dim_ = dim_;
        z.values_.assign(values_.size(), 0.0);
        return z;
    }

    friend bool operator==(const AdapterParams&, const AdapterParams&) = default;

private:
    std::size_t offset(Tower t) const { return t == Tower::Image ? 0 : block_size(dim_); }

    std::size_t dim_ = 0;
    std::vector<double> values_;
};

} // namespace capfuse
