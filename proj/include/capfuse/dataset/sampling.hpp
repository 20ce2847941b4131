#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"
#include "capfuse/rng.hpp"

namespace capfuse {

struct FewShotSpec {
    /// Shots per class; nullopt selects every available sample ("full").
    std::optional<std::size_t> k;
    std::uint64_t seed = 0;

    static FewShotSpec full(std::uint64_t seed = 0) { return {std::nullopt, seed}; }
    static FewShotSpec shots(std::size_t k, std::uint64_t seed = 0) {
        if (k == 0) fail(Errc::InvalidArgument, "few-shot K must be >= 1");
        return {k, seed};
    }
};

struct FewShotSelection {
    std::vector<SampleRecord> samples;
    /// Classes in [0, num_classes) that had no candidates at all.
    std::vector<int> empty_classes;
};

namespace detail {

inline std::vector<std::vector<SampleRecord>> group_by_class(std::span<const SampleRecord> samples,
                                                            std::size_t num_classes) {
    std::vector<SampleRecord> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].sample_id == sorted[i - 1].sample_id)
            fail(Errc::InvalidArgument, "duplicate sample_id '" + sorted[i].sample_id + "'");
    std::vector<std::vector<SampleRecord>> by_class(num_classes);
    for (auto& s : sorted) {
        if (s.class_id < 0 || static_cast<std::size_t>(s.class_id) >= num_classes)
            fail(Errc::InvalidArgument, "class_id " + std::to_string(s.class_id) + " outside class table");
        by_class[s.class_id].push_back(std::move(s));
    }
    return by_class;
}

} // namespace detail

/// Class-balanced selection of min(K, available) samples per class, without
/// replacement. Candidates are sorted by sample_id before the seeded shuffle,
/// so the result does not depend on input order.
inline FewShotSelection few_shot_sample(std::span<const SampleRecord> samples, const FewShotSpec& spec,
                                        std::size_t num_classes) {
    if (samples.empty()) fail(Errc::InvalidArgument, "few_shot_sample: no samples");
    auto by_class = detail::group_by_class(samples, num_classes);
    Rng rng = Rng::derive(spec.seed, "few-shot");
    FewShotSelection out;
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto& group = by_class[k];
        if (group.empty()) {
            out.empty_classes.push_back(static_cast<int>(k));
            continue;
        }
        rng.shuffle(group);
        const std::size_t take = std::min(spec.k.value_or(group.size()), group.size());
        out.samples.insert(out.samples.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(take));
    }
    return out;
}

/// Seeded, class-stratified train/val split for datasets without a predefined
/// val split. Each class keeps at least one training sample.
inline std::vector<SampleRecord> split_train_val(std::span<const SampleRecord> samples, std::size_t num_classes,
                                                 double val_fraction = 0.1, std::uint64_t seed = 0) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        fail(Errc::InvalidArgument, "val_fraction must be in [0, 1)");
    auto by_class = detail::group_by_class(samples, num_classes);
    Rng rng = Rng::derive(seed, "train-val-split");
    std::vector<SampleRecord> out;
    for (auto& group : by_class) {
        rng.shuffle(group);
        std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(group.size())));
        if (group.size() > 0 && n_val >= group.size()) n_val = group.size() - 1;
        for (std::size_t i = 0; i < group.size(); ++i) {
            group[i].split = i < n_val ? Split::Val : Split::Train;
            out.push_back(group[i]);
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    return out;
}

} // namespace capfuse
