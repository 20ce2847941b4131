#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "capfuse/analysis/bpe.hpp"
#include "capfuse/dataset/store.hpp"
#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"
#include "capfuse/linalg.hpp"

namespace capfuse {

struct Histogram {
    std::vector<double> edges;  // bins + 1 ascending edges; the last bin is closed
    std::vector<std::size_t> counts;
};

struct StatsSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    double min = 0.0;
    double max = 0.0;
    Histogram histogram;
};

/// Summary with `bins` equal-width bins spanning [min, max]. A constant
/// sample gets a single zero-width bin.
inline StatsSummary summarize(std::span<const double> xs, std::size_t bins = 20) {
    if (xs.empty()) fail(Errc::InvalidArgument, "cannot summarize an empty sample");
    if (bins == 0) fail(Errc::InvalidArgument, "histogram needs at least one bin");
    StatsSummary s;
    s.count = xs.size();
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = std::clamp(sum / static_cast<double>(xs.size()), s.min, s.max);
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size()));

    const std::size_t nb = s.max > s.min ? bins : 1;
    const double width = (s.max - s.min) / static_cast<double>(nb);
    for (std::size_t b = 0; b <= nb; ++b)
        s.histogram.edges.push_back(b == nb ? s.max : s.min + width * static_cast<double>(b));
    s.histogram.counts.assign(nb, 0);
    for (double x : xs) {
        std::size_t b = width > 0 ? static_cast<std::size_t>((x - s.min) / width) : 0;
        if (b >= nb) b = nb - 1;
        ++s.histogram.counts[b];
    }
    return s;
}

inline nlohmann::json to_json(const StatsSummary& s) {
    return {{"count", s.count},
            {"mean", s.mean},
            {"std", s.std},
            {"min", s.min},
            {"max", s.max},
            {"histogram", {{"edges", s.histogram.edges}, {"counts", s.histogram.counts}}}};
}

struct OverLimit {
    std::size_t index = 0;  // position in the input list
    std::string sample_id;
    Characteristic characteristic = Characteristic::Visual;
    std::size_t length = 0;
    std::size_t overflow = 0;  // length - context limit
};

struct TokenLengthReport {
    StatsSummary summary;
    std::vector<std::size_t> lengths;
    std::vector<OverLimit> over_limit;
};

/// Token lengths (specials included) of each caption's final text. Captions
/// longer than the context limit are listed, never truncated.
inline TokenLengthReport token_length_stats(const std::vector<CaptionRecord>& captions, const BpeTokenizer& tok,
                                            std::size_t bins = 20) {
    if (captions.empty()) fail(Errc::InvalidArgument, "no captions to analyze");
    TokenLengthReport r;
    std::vector<double> xs;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        const std::size_t len = tok.token_length(captions[i].final_text);
        r.lengths.push_back(len);
        xs.push_back(static_cast<double>(len));
        if (len > tok.context_limit())
            r.over_limit.push_back(
                {i, captions[i].sample_id, captions[i].characteristic, len, len - tok.context_limit()});
    }
    r.summary = summarize(xs, bins);
    return r;
}

inline TokenLengthReport token_length_stats(const std::vector<std::string>& texts, const BpeTokenizer& tok,
                                            std::size_t bins = 20) {
    std::vector<CaptionRecord> recs;
    for (const auto& t : texts) recs.push_back({"", Characteristic::Visual, t, t, "", ""});
    return token_length_stats(recs, tok, bins);
}

struct ClipScoreReport {
    StatsSummary summary;
    std::vector<double> scores;  // aligned with the input captions
};

/// Cosine similarity between each caption's text embedding and its image.
inline ClipScoreReport clip_score_stats(const EmbeddingStore& store, const std::vector<CaptionRecord>& captions,
                                        std::size_t bins = 20) {
    if (captions.empty()) fail(Errc::InvalidArgument, "no captions to score");
    ClipScoreReport r;
    for (const auto& c : captions) {
        const auto img = store.image(c.sample_id);
        const auto txt = store.text(c.sample_id, c.characteristic);
        const double ni = l2_norm(img), nt = l2_norm(txt);
        if (ni < kNormEpsilon || nt < kNormEpsilon) fail(Errc::ZeroNorm, "zero embedding for " + c.sample_id);
        r.scores.push_back(std::clamp(dot(img, txt) / (ni * nt), -1.0, 1.0));
    }
    r.summary = summarize(r.scores, bins);
    return r;
}

} // namespace capfuse
