#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/linalg.hpp"
#include "capfuse/rng.hpp"
#include "capfuse/train/optim.hpp"
#include "capfuse/train/trainer.hpp"

namespace capfuse {

/// K-way linear classifier over normalized frozen image embeddings.
/// values = [W (K x d, row-major) | b (K)], zero-initialized.
struct LinearHead {
    std::size_t classes = 0;
    std::size_t dim = 0;
    std::vector<double> values;

    static LinearHead zeros(std::size_t classes, std::size_t dim) {
        return {classes, dim, std::vector<double>(classes * dim + classes, 0.0)};
    }

    std::vector<double> logits(std::span<const double> x) const {
        std::vector<double> z(classes);
        for (std::size_t k = 0; k < classes; ++k) {
            double s = values[classes * dim + k];
            for (std::size_t c = 0; c < dim; ++c) s += values[k * dim + c] * x[c];
            z[k] = s;
        }
        return z;
    }

    int predict(std::span<const double> x) const {
        const auto z = logits(x);
        return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }
};

struct ProbeEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double train_accuracy = 0.0;
};

struct ProbeResult {
    LinearHead head;
    std::vector<ProbeEpoch> history;
};

/// Cross-entropy linear probe (the FT baseline) with the trainer's optimizer,
/// schedule, shuffling and batching. Uses cfg.lr, weight_decay, epochs,
/// batch_size, min_lr and seed; the contrastive settings are ignored.
inline ProbeResult cross_entropy_probe(const EmbeddingStore& store, std::span<const SampleRecord> samples,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (samples.empty()) fail(Errc::InvalidArgument, "probe: no samples");
    const std::size_t k_classes = store.num_classes();
    const std::size_t d = store.dim();
    std::vector<bool> seen(k_classes, false);
    std::vector<std::vector<double>> feats;
    for (const auto& s : samples) {
        const auto u = l2_normalize(to_vec(store.image(s.sample_id)));
        feats.emplace_back(u.values().begin(), u.values().end());
        seen[s.class_id] = true;
    }
    for (std::size_t k = 0; k < k_classes; ++k)
        if (!seen[k]) fail(Errc::InvalidArgument, "probe: class " + std::to_string(k) + " has no training samples");

    const std::size_t n = samples.size();
    const std::size_t total_steps = cfg.epochs * ((n + cfg.batch_size - 1) / cfg.batch_size);
    Rng rng = Rng::derive(cfg.seed, "probe");
    const AdamWHyper hyper{0.9, 0.999, 1e-8, cfg.weight_decay};
    OptimState state;
    ProbeResult out{LinearHead::zeros(k_classes, d), {}};
    std::vector<std::size_t> order(n);
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        ProbeEpoch rec{epoch, 0.0, cosine_lr(step, total_steps, cfg.lr, cfg.min_lr), 0.0};
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            std::vector<double> grad(out.head.values.size(), 0.0);
            for (std::size_t i = start; i < stop; ++i) {
                const auto& x = feats[order[i]];
                const int y = samples[order[i]].class_id;
                auto z = out.head.logits(x);
                const double mx = *std::max_element(z.begin(), z.end());
                double sum = 0.0;
                for (double& v : z) sum += (v = std::exp(v - mx));
                for (double& v : z) v /= sum;
                rec.loss -= std::log(std::max(z[y], 1e-300)) / static_cast<double>(n);
                for (std::size_t k = 0; k < k_classes; ++k) {
                    const double g = (z[k] - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_b;
                    grad[k_classes * d + k] += g;
                    for (std::size_t c = 0; c < d; ++c) grad[k * d + c] += g * x[c];
                }
            }
            adamw_step(out.head.values, grad, state, cosine_lr(step, total_steps, cfg.lr, cfg.min_lr), hyper);
            ++step;
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i) correct += out.head.predict(feats[i]) == samples[i].class_id;
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        out.history.push_back(rec);
    }
    return out;
}

} // namespace capfuse
