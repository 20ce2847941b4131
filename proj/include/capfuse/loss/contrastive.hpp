#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capfuse/error.hpp"
#include "capfuse/linalg.hpp"
#include "capfuse/loss/mask.hpp"

namespace capfuse {

/// N paired image/text embeddings (raw, not necessarily normalized) and labels.
struct Batch {
    Mat img;
    Mat txt;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }

    void validate() const {
        if (img.rows() != labels.size() || txt.rows() != labels.size())
            fail(Errc::ShapeMismatch, "batch: img, txt and labels must have equal length");
        if (img.cols() != txt.cols()) fail(Errc::DimMismatch, "batch: img and txt dims differ");
        if (labels.empty()) fail(Errc::InvalidArgument, "batch is empty");
    }
};

enum class SupDirection { ImgToTxt, Symmetric };

inline std::string_view to_string(SupDirection d) { return d == SupDirection::ImgToTxt ? "img_to_txt" : "symmetric"; }

inline SupDirection parse_sup_direction(std::string_view s) {
    if (s == "img_to_txt") return SupDirection::ImgToTxt;
    if (s == "symmetric") return SupDirection::Symmetric;
    fail(Errc::InvalidArgument, "unknown direction '" + std::string(s) + "'");
}

struct LossConfig {
    double w = 0.2;
    double tau_std = 0.07;
    double tau_sup = 1.0;
    SupDirection direction = SupDirection::ImgToTxt;

    void validate() const {
        if (!(w >= 0.0 && w <= 1.0)) fail(Errc::InvalidArgument, "loss weight w must be in [0, 1]");
        if (!(tau_std > 0.0)) fail(Errc::InvalidArgument, "tau_std must be > 0");
        if (!(tau_sup > 0.0)) fail(Errc::InvalidArgument, "tau_sup must be > 0");
    }
};

struct LossBreakdown {
    double l_i = 0.0;
    double l_t = 0.0;
    double l_std = 0.0;
    double l_sup = 0.0;
    double total = 0.0;
};

/// Gradients with respect to the raw batch embeddings (and the std temperature).
struct BatchGrad {
    Mat img;
    Mat txt;
    double tau_std = 0.0;
};

struct StdLossResult {
    double l_i = 0.0;
    double l_t = 0.0;
    double l_std = 0.0;
    BatchGrad grad;
};

struct SupLossResult {
    double l_sup = 0.0;
    BatchGrad grad;
};

struct CombinedLossResult {
    LossBreakdown loss;
    BatchGrad grad;
};

namespace detail {

struct SimilarityCache {
    Mat unit_img;
    Mat unit_txt;
    std::vector<double> norm_img;
    std::vector<double> norm_txt;
    Mat s;
};

inline SimilarityCache similarity_forward(const Batch& b) {
    b.validate();
    SimilarityCache c;
    c.unit_img = normalize_rows(b.img, &c.norm_img);
    c.unit_txt = normalize_rows(b.txt, &c.norm_txt);
    c.s = matmul_transposed(c.unit_img, c.unit_txt);
    return c;
}

/// dS -> gradients on the raw embeddings through S = U T^T and row normalization.
inline BatchGrad similarity_backward(const SimilarityCache& c, const Mat& ds) {
    const std::size_t n = c.s.rows();
    const std::size_t d = c.unit_img.cols();
    Mat du(n, d), dt(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double g = ds(i, j);
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) {
                du(i, k) += g * c.unit_txt(j, k);
                dt(j, k) += g * c.unit_img(i, k);
            }
        }
    return {normalize_rows_backward(c.unit_img, c.norm_img, du),
            normalize_rows_backward(c.unit_txt, c.norm_txt, dt), 0.0};
}

inline double logsumexp(std::span<const double> z) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : z) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : z) s += std::exp(x - mx);
    return mx + std::log(s);
}

struct StdFromSim {
    double l_i = 0.0;
    double l_t = 0.0;
    Mat ds;
    double d_tau = 0.0;
};

/// Row (image->text) and column (text->image) cross-entropy over S / tau,
/// with dL_std/dS and dL_std/dtau.
inline StdFromSim std_from_similarity(const Mat& s, double tau) {
    const std::size_t n = s.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    StdFromSim out{0.0, 0.0, Mat(n, n), 0.0};
    Mat dz(n, n);  // dL_std / d(S / tau)
    std::vector<double> z(n);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) z[j] = s(i, j) / tau;
        const double lse = logsumexp(z);
        out.l_i -= (z[i] - lse) * inv_n;
        for (std::size_t j = 0; j < n; ++j)
            dz(i, j) += 0.5 * inv_n * (std::exp(z[j] - lse) - (i == j ? 1.0 : 0.0));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) z[j] = s(j, i) / tau;
        const double lse = logsumexp(z);
        out.l_t -= (z[i] - lse) * inv_n;
        for (std::size_t j = 0; j < n; ++j)
            dz(j, i) += 0.5 * inv_n * (std::exp(z[j] - lse) - (i == j ? 1.0 : 0.0));
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            out.ds(i, j) = dz(i, j) / tau;
            out.d_tau -= dz(i, j) * s(i, j) / (tau * tau);
        }
    return out;
}

/// Row-wise supervised loss over `s`, accumulating `scale * dL/dS` into `ds`
/// (transposed when `transpose` is set, so the column variant reuses this).
inline double sup_rows(const Mat& s, const MaskPair& mask, double tau, double scale, bool transpose, Mat& ds) {
    const std::size_t n = s.rows();
    if (mask.valid.empty()) return 0.0;
    const double inv_v = 1.0 / static_cast<double>(mask.valid.size());
    std::vector<double> z(n);
    double loss = 0.0;
    for (std::size_t i : mask.valid) {
        for (std::size_t k = 0; k < n; ++k) z[k] = (transpose ? s(k, i) : s(i, k)) / tau;
        const double lse = logsumexp(z);
        double positives = 0.0;
        double weighted = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            positives += mask.m_hat(i, j);
            weighted += mask.m_hat(i, j) * (z[j] - lse);
        }
        loss -= inv_v * weighted / positives;
        for (std::size_t k = 0; k < n; ++k) {
            const double g = scale * inv_v * (std::exp(z[k] - lse) - mask.m_hat(i, k) / positives) / tau;
            if (transpose)
                ds(k, i) += g;
            else
                ds(i, k) += g;
        }
    }
    return loss;
}

struct SupFromSim {
    double l_sup = 0.0;
    Mat ds;
};

inline SupFromSim sup_from_similarity(const Mat& s, const MaskPair& mask, double tau, SupDirection dir) {
    const std::size_t n = s.rows();
    SupFromSim out{0.0, Mat(n, n)};
    if (dir == SupDirection::ImgToTxt) {
        out.l_sup = sup_rows(s, mask, tau, 1.0, false, out.ds);
    } else {
        const double rows = sup_rows(s, mask, tau, 0.5, false, out.ds);
        const double cols = sup_rows(s, mask, tau, 0.5, true, out.ds);
        out.l_sup = 0.5 * (rows + cols);
    }
    return out;
}

} // namespace detail

/// Standard bidirectional contrastive loss: cross-entropy of matching pairs
/// over image->text rows and text->image columns of S / tau, averaged.
inline StdLossResult std_loss(const Batch& batch, double tau_std) {
    if (!(tau_std > 0.0)) fail(Errc::InvalidArgument, "tau_std must be > 0");
    const auto cache = detail::similarity_forward(batch);
    auto r = detail::std_from_similarity(cache.s, tau_std);
    StdLossResult out{r.l_i, r.l_t, (r.l_i + r.l_t) / 2.0, detail::similarity_backward(cache, r.ds)};
    out.grad.tau_std = r.d_tau;
    return out;
}

/// Class-supervised loss: for each row with at least one same-class partner,
/// the mean log-softmax of S / tau_sup over its off-diagonal positives; rows
/// averaged over the valid set. Denominators include the diagonal.
inline SupLossResult sup_loss(const Batch& batch, const MaskPair& mask, double tau_sup,
                              SupDirection direction = SupDirection::ImgToTxt) {
    if (!(tau_sup > 0.0)) fail(Errc::InvalidArgument, "tau_sup must be > 0");
    if (mask.m.rows() != batch.size()) fail(Errc::ShapeMismatch, "mask size != batch size");
    const auto cache = detail::similarity_forward(batch);
    auto r = detail::sup_from_similarity(cache.s, mask, tau_sup, direction);
    return {r.l_sup, detail::similarity_backward(cache, r.ds)};
}

/// total = (1 - w) * l_std + w * l_sup, with the matching gradient.
inline CombinedLossResult combined_loss(const Batch& batch, const LossConfig& cfg) {
    cfg.validate();
    const auto cache = detail::similarity_forward(batch);
    const auto mask = build_mask(batch.labels);
    auto st = detail::std_from_similarity(cache.s, cfg.tau_std);

    CombinedLossResult out;
    out.loss.l_i = st.l_i;
    out.loss.l_t = st.l_t;
    out.loss.l_std = (st.l_i + st.l_t) / 2.0;

    auto sup = detail::sup_from_similarity(cache.s, mask, cfg.tau_sup, cfg.direction);
    out.loss.l_sup = sup.l_sup;

    // At w = 0 the std gradient is passed through untouched.
    Mat ds = st.ds;
    if (cfg.w != 0.0) {
        auto flat = ds.flat();
        auto sflat = sup.ds.flat();
        for (std::size_t k = 0; k < flat.size(); ++k) flat[k] = (1.0 - cfg.w) * flat[k] + cfg.w * sflat[k];
    }
    out.loss.total = (1.0 - cfg.w) * out.loss.l_std + cfg.w * out.loss.l_sup;
    out.grad = detail::similarity_backward(cache, ds);
    out.grad.tau_std = (1.0 - cfg.w) * st.d_tau;
    return out;
}

} // namespace capfuse
