#pragma once

// Test-only reference implementations. These deliberately follow the textbook
// formulas with plain loops and no shared code with the library's kernels.

#include <cmath>
#include <cstddef>
#include <limits>
#include <algorithm>
#include <utility>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double naive_cos(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline Rows naive_similarity(const Rows& img, const Rows& txt) {
    Rows s(img.size(), std::vector<double>(txt.size()));
    for (std::size_t i = 0; i < img.size(); ++i)
        for (std::size_t j = 0; j < txt.size(); ++j) s[i][j] = naive_cos(img[i], txt[j]);
    return s;
}

/// Supervised loss evaluated literally: explicit loops over i (anchors),
/// j (positives) and k (denominator terms), exp/log without stabilization.
inline double naive_sup_loss(const Rows& s, const std::vector<int>& labels, double tau) {
    const std::size_t n = labels.size();
    double total = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double positives = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) positives += 1.0;
        if (positives == 0.0) continue;
        ++valid;
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double m_hat = (labels[i] == labels[j] ? 1.0 : 0.0) - (i == j ? 1.0 : 0.0);
            if (m_hat == 0.0) continue;
            double denom = 0.0;
            for (std::size_t k = 0; k < n; ++k) denom += std::exp(s[i][k] / tau);
            row += m_hat * std::log(std::exp(s[i][j] / tau) / denom);
        }
        total += row / positives;
    }
    return valid == 0 ? 0.0 : -total / static_cast<double>(valid);
}

inline double naive_std_loss(const Rows& s, double tau) {
    const std::size_t n = s.size();
    double li = 0.0, lt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double di = 0.0, dt = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            di += std::exp(s[i][j] / tau);
            dt += std::exp(s[j][i] / tau);
        }
        li += -std::log(std::exp(s[i][i] / tau) / di);
        lt += -std::log(std::exp(s[i][i] / tau) / dt);
    }
    return (li / n + lt / n) / 2.0;
}

/// Exhaustive argmax with lowest-index tie-break.
inline std::size_t argmax(const std::vector<double>& scores) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k)
        if (scores[k] > scores[best]) best = k;
    return best;
}

enum class Mode { EmbeddingAvg, LogitAvg, Nearest };

using Bank = std::vector<std::pair<int, std::vector<double>>>;

/// Per-mode exhaustive prediction written directly from the definitions.
inline std::size_t predict(const Bank& bank, std::size_t classes, const std::vector<double>& img, Mode mode) {
    std::vector<double> scores(classes);
    for (std::size_t k = 0; k < classes; ++k) {
        Rows units;
        for (const auto& [label, e] : bank)
            if (label == static_cast<int>(k)) {
                std::vector<double> v = e;
                double n = 0;
                for (double x : v) n += x * x;
                for (double& x : v) x /= std::sqrt(n);
                units.push_back(v);
            }
        if (mode == Mode::EmbeddingAvg) {
            std::vector<double> mean(img.size(), 0.0);
            for (const auto& u : units)
                for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += u[i] / units.size();
            scores[k] = naive_cos(img, mean);
        } else if (mode == Mode::LogitAvg) {
            double s = 0;
            for (const auto& u : units) s += naive_cos(img, u);
            scores[k] = s / units.size();
        } else {
            double s = -2;
            for (const auto& u : units) s = std::max(s, naive_cos(img, u));
            scores[k] = s;
        }
    }
    return argmax(scores);
}

} // namespace oracle
