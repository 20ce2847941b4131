#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capfuse/dataset/captions.hpp"
#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/linalg.hpp"
#include "capfuse/train/adapter.hpp"

namespace capfuse {

enum class InferenceMode { EmbeddingAvg, LogitAvg, Nearest, Template };

inline std::string_view to_string(InferenceMode m) {
    switch (m) {
    case InferenceMode::EmbeddingAvg: return "embedding_avg";
    case InferenceMode::LogitAvg: return "logit_avg";
    case InferenceMode::Nearest: return "nearest";
    case InferenceMode::Template: return "template";
    }
    return "embedding_avg";
}

inline InferenceMode parse_inference_mode(std::string_view s) {
    if (s == "embedding_avg") return InferenceMode::EmbeddingAvg;
    if (s == "logit_avg") return InferenceMode::LogitAvg;
    if (s == "nearest") return InferenceMode::Nearest;
    if (s == "template") return InferenceMode::Template;
    fail(Errc::InvalidArgument, "unknown inference mode '" + std::string(s) + "'");
}

/// A caption (or template) embedding tagged with its class.
struct LabeledEmbedding {
    int class_id = 0;
    Vec embedding;
};

struct BankEntry {
    int class_id = 0;
    UnitVec embedding;
};

/// Per-class text evidence used at inference time.
///
/// embedding_avg / template: `prototypes[k]` is the unit class embedding.
/// logit_avg / nearest: `bank` keeps every normalized caption embedding and
/// aggregation happens over per-caption scores; `prototypes` is still filled
/// (with the embedding average) for reference.
struct ClassPrototypeSet {
    InferenceMode mode = InferenceMode::EmbeddingAvg;
    std::vector<int> class_ids;
    std::vector<UnitVec> prototypes;
    std::vector<std::size_t> n_k;
    std::vector<BankEntry> bank;

    std::size_t num_classes() const noexcept { return class_ids.size(); }
    std::size_t dim() const noexcept { return prototypes.empty() ? 0 : prototypes.front().dim(); }
};

namespace detail {

inline Vec adapt_text(const AdapterParams* adapter, const Vec& v) {
    return adapter ? Vec(adapter->apply(Tower::Text, v.values())) : v;
}

} // namespace detail

/// Builds class prototypes from tagged caption embeddings: each embedding is
/// (optionally adapted, then) normalized; embedding_avg averages the unit
/// vectors of a class and renormalizes. Every class in [0, num_classes) must
/// have at least one entry.
inline ClassPrototypeSet build_prototypes(std::span<const LabeledEmbedding> captions, std::size_t num_classes,
                                          const AdapterParams* adapter, InferenceMode mode) {
    if (num_classes == 0) fail(Errc::InvalidArgument, "build_prototypes: no classes");
    std::vector<std::vector<UnitVec>> per_class(num_classes);
    ClassPrototypeSet out;
    out.mode = mode;
    for (const auto& c : captions) {
        if (c.class_id < 0 || static_cast<std::size_t>(c.class_id) >= num_classes)
            fail(Errc::InvalidArgument, "caption class_id outside class table");
        auto unit = l2_normalize(detail::adapt_text(adapter, c.embedding));
        if (mode == InferenceMode::LogitAvg || mode == InferenceMode::Nearest) out.bank.push_back({c.class_id, unit});
        per_class[c.class_id].push_back(std::move(unit));
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (per_class[k].empty())
            fail(Errc::EmptyClassCaptions, "class " + std::to_string(k) + " has no captions");
        if (mode == InferenceMode::Template && per_class[k].size() != 1)
            fail(Errc::InvalidArgument, "template mode expects exactly one embedding per class");
        out.class_ids.push_back(static_cast<int>(k));
        out.n_k.push_back(per_class[k].size());
        out.prototypes.push_back(mean_renormalize(per_class[k]));
    }
    return out;
}

/// Caption embeddings for `samples` looked up in the store (text rows keyed by
/// sample and characteristic). Captions of samples outside `samples` are skipped.
inline std::vector<LabeledEmbedding> caption_embeddings(const EmbeddingStore& store,
                                                        std::span<const SampleRecord> samples,
                                                        const CaptionIndex& captions) {
    std::vector<LabeledEmbedding> out;
    for (const auto& s : samples)
        for (const auto& c : captions.captions(s.sample_id))
            out.push_back({s.class_id, to_vec(store.text(s.sample_id, c.characteristic))});
    return out;
}

/// One "a photo of a {class}." embedding per class, from the store's template rows.
inline std::vector<LabeledEmbedding> template_embeddings(const EmbeddingStore& store) {
    std::vector<LabeledEmbedding> out;
    for (std::size_t k = 0; k < store.num_classes(); ++k)
        out.push_back({static_cast<int>(k), to_vec(store.template_text(static_cast<int>(k)))});
    return out;
}

/// Convenience wrapper: template mode reads the store's class templates, the
/// other modes read captions of `samples`.
inline ClassPrototypeSet prototypes_from_store(const EmbeddingStore& store, std::span<const SampleRecord> samples,
                                               const CaptionIndex& captions, const AdapterParams* adapter,
                                               InferenceMode mode) {
    const auto entries =
        mode == InferenceMode::Template ? template_embeddings(store) : caption_embeddings(store, samples, captions);
    return build_prototypes(entries, store.num_classes(), adapter, mode);
}

} // namespace capfuse
