#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capfuse/linalg.hpp"

namespace capfuse {

/// Same-class mask M, its self-pair-free version M_hat = M - I, and the rows
/// of M_hat with at least one positive.
struct MaskPair {
    Mat m;
    Mat m_hat;
    std::vector<std::size_t> valid;
};

inline MaskPair build_mask(std::span<const int> labels) {
    const std::size_t n = labels.size();
    MaskPair out{Mat(n, n), Mat(n, n), {}};
    for (std::size_t i = 0; i < n; ++i) {
        bool has_positive = false;
        for (std::size_t j = 0; j < n; ++j) {
            const double same = labels[i] == labels[j] ? 1.0 : 0.0;
            out.m(i, j) = same;
            out.m_hat(i, j) = i == j ? 0.0 : same;
            has_positive = has_positive || out.m_hat(i, j) > 0.0;
        }
        if (has_positive) out.valid.push_back(i);
    }
    return out;
}

} // namespace capfuse
