#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/infer/prototypes.hpp"
#include "capfuse/linalg.hpp"
#include "capfuse/train/adapter.hpp"

namespace capfuse {

struct Prediction {
    int class_id = 0;
    std::vector<double> scores;  // one per class, index = class_id
};

/// Scores every class against the image and returns the argmax; ties go to
/// the lowest class_id.
inline Prediction classify(std::span<const double> image, const ClassPrototypeSet& protos) {
    if (protos.num_classes() == 0) fail(Errc::InvalidArgument, "classify: empty prototype set");
    if (image.size() != protos.dim()) fail(Errc::DimMismatch, "classify: image dim != prototype dim");
    const auto u = l2_normalize(image);

    Prediction p;
    p.scores.assign(protos.num_classes(), 0.0);
    switch (protos.mode) {
    case InferenceMode::EmbeddingAvg:
    case InferenceMode::Template:
        for (std::size_t k = 0; k < protos.num_classes(); ++k) p.scores[k] = dot(u.values(), protos.prototypes[k].values());
        break;
    case InferenceMode::LogitAvg:
        for (const auto& e : protos.bank) p.scores[e.class_id] += dot(u.values(), e.embedding.values());
        for (std::size_t k = 0; k < protos.num_classes(); ++k) p.scores[k] /= static_cast<double>(protos.n_k[k]);
        break;
    case InferenceMode::Nearest:
        std::fill(p.scores.begin(), p.scores.end(), -std::numeric_limits<double>::infinity());
        for (const auto& e : protos.bank)
            p.scores[e.class_id] = std::max(p.scores[e.class_id], dot(u.values(), e.embedding.values()));
        break;
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.scores.size(); ++k)
        if (p.scores[k] > p.scores[best]) best = k;
    p.class_id = protos.class_ids[best];
    return p;
}

struct PredictionRow {
    std::string sample_id;
    int true_class = 0;
    int pred_class = 0;
    std::vector<std::pair<int, double>> top;  // up to five (class_id, score), best first
};

struct EvalResult {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;  // NaN for classes absent from the split
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
    std::vector<PredictionRow> predictions;
};

inline EvalResult evaluate_samples(const EmbeddingStore& store, std::span<const SampleRecord> samples,
                                   const ClassPrototypeSet& protos, const AdapterParams* adapter) {
    if (samples.empty()) fail(Errc::EmptySplit, "no samples to evaluate");
    const std::size_t k = std::max(store.num_classes(), protos.num_classes());
    EvalResult r;
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    std::vector<std::size_t> class_total(k, 0), class_correct(k, 0);
    for (const auto& s : samples) {
        const auto raw = store.image(s.sample_id);
        const auto x = adapter ? adapter->apply(Tower::Image, raw) : std::vector<double>(raw.begin(), raw.end());
        const auto pred = classify(x, protos);

        PredictionRow row{s.sample_id, s.class_id, pred.class_id, {}};
        std::vector<std::size_t> order(pred.scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pred.scores[a] > pred.scores[b]; });
        for (std::size_t i = 0; i < std::min<std::size_t>(5, order.size()); ++i)
            row.top.emplace_back(protos.class_ids[order[i]], pred.scores[order[i]]);
        r.predictions.push_back(std::move(row));

        ++r.total;
        ++class_total[s.class_id];
        ++r.confusion[s.class_id][pred.class_id];
        if (pred.class_id == s.class_id) {
            ++r.correct;
            ++class_correct[s.class_id];
        }
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    for (std::size_t c = 0; c < k; ++c)
        r.per_class_accuracy.push_back(class_total[c] ? static_cast<double>(class_correct[c]) / class_total[c]
                                                      : std::numeric_limits<double>::quiet_NaN());
    return r;
}

/// Top-1 accuracy of `protos` over one split of the store.
inline EvalResult evaluate_top1(const EmbeddingStore& store, Split split, const ClassPrototypeSet& protos,
                                const AdapterParams* adapter) {
    const auto samples = store.split(split);
    if (samples.empty()) fail(Errc::EmptySplit, "split '" + std::string(to_string(split)) + "' is empty");
    return evaluate_samples(store, samples, protos, adapter);
}

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// sample_id,true_class,pred_class,top1_class,top1_score,...,top5_class,top5_score
inline std::string predictions_csv(const EvalResult& r, const std::vector<std::string>& class_names) {
    std::string out = "sample_id,true_class,pred_class";
    for (int i = 1; i <= 5; ++i) out += ",top" + std::to_string(i) + "_class,top" + std::to_string(i) + "_score";
    out += "\n";
    auto name = [&](int k) {
        return static_cast<std::size_t>(k) < class_names.size() ? class_names[k] : std::to_string(k);
    };
    for (const auto& p : r.predictions) {
        out += p.sample_id + "," + name(p.true_class) + "," + name(p.pred_class);
        for (std::size_t i = 0; i < 5; ++i)
            out += i < p.top.size() ? "," + name(p.top[i].first) + "," + format_double(p.top[i].second) : ",,";
        out += "\n";
    }
    return out;
}

inline nlohmann::json metrics_json(const EvalResult& r, const std::vector<std::string>& class_names) {
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k) {
        const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
        per_class[name] = std::isnan(r.per_class_accuracy[k]) ? nlohmann::json(nullptr)
                                                              : nlohmann::json(r.per_class_accuracy[k]);
    }
    return {{"accuracy", r.accuracy},
            {"correct", r.correct},
            {"total", r.total},
            {"per_class_accuracy", per_class},
            {"confusion", r.confusion}};
}

} // namespace capfuse
