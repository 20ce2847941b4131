#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "capfuse/dataset/captions.hpp"
#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/infer/classify.hpp"
#include "capfuse/infer/prototypes.hpp"
#include "capfuse/loss/contrastive.hpp"
#include "capfuse/rng.hpp"
#include "capfuse/train/adapter.hpp"
#include "capfuse/train/optim.hpp"

namespace capfuse {

enum class CaptionMode { Generated, Template };
enum class CheckpointSelection { BestVal, FinalEpoch };

inline std::string_view to_string(CaptionMode m) { return m == CaptionMode::Generated ? "generated" : "template"; }
inline CaptionMode parse_caption_mode(std::string_view s) {
    if (s == "generated") return CaptionMode::Generated;
    if (s == "template") return CaptionMode::Template;
    fail(Errc::InvalidArgument, "unknown caption_mode '" + std::string(s) + "'");
}
inline std::string_view to_string(CheckpointSelection s) { return s == CheckpointSelection::BestVal ? "best_val" : "final"; }
inline CheckpointSelection parse_selection(std::string_view s) {
    if (s == "best_val") return CheckpointSelection::BestVal;
    if (s == "final") return CheckpointSelection::FinalEpoch;
    fail(Errc::InvalidArgument, "unknown checkpoint selection '" + std::string(s) + "'");
}

struct TrainConfig {
    double lr = 1e-5;
    double weight_decay = 1e-4;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double min_lr = 0.0;
    std::uint64_t seed = 0;
    LossConfig loss;
    CaptionMode caption_mode = CaptionMode::Generated;
    bool learn_temperature = false;
    bool freeze_text = false;
    CheckpointSelection selection = CheckpointSelection::BestVal;

    void validate() const {
        if (!(lr >= 0.0)) fail(Errc::InvalidArgument, "lr must be >= 0");
        if (!(min_lr >= 0.0 && min_lr <= lr)) fail(Errc::InvalidArgument, "min_lr must be in [0, lr]");
        if (!(weight_decay >= 0.0)) fail(Errc::InvalidArgument, "weight_decay must be >= 0");
        if (epochs < 1) fail(Errc::InvalidArgument, "epochs must be >= 1");
        if (batch_size < 1) fail(Errc::InvalidArgument, "batch_size must be >= 1");
        loss.validate();
    }
};

/// The FLYP-style baseline: template captions and the standard loss only.
inline TrainConfig flyp_config(TrainConfig cfg) {
    cfg.caption_mode = CaptionMode::Template;
    cfg.loss.w = 0.0;
    return cfg;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"min_lr", c.min_lr},
            {"seed", c.seed},
            {"w", c.loss.w},
            {"tau_std", c.loss.tau_std},
            {"tau_sup", c.loss.tau_sup},
            {"direction", to_string(c.loss.direction)},
            {"caption_mode", to_string(c.caption_mode)},
            {"learn_temperature", c.learn_temperature},
            {"freeze_text", c.freeze_text},
            {"selection", to_string(c.selection)}};
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    LossBreakdown loss;     // sample-weighted means over the epoch's batches
    double lr = 0.0;        // learning rate at the epoch's first step
    std::optional<double> val_accuracy;
};

struct TrainResult {
    AdapterParams adapter;
    double tau_std = 0.07;
    std::vector<EpochRecord> history;
    std::size_t selected_epoch = 0;
};

/// Loss of one batch as a function of the adapters, with dL/d(adapter) and
/// dL/dtau_std. Raw rows are mapped through each tower's adapter and then
/// normalized inside combined_loss.
struct AdapterBatchLoss {
    LossBreakdown loss;
    AdapterParams grad;
    double grad_tau_std = 0.0;
};

inline AdapterBatchLoss adapter_batch_loss(const AdapterParams& adapter, const Mat& raw_img, const Mat& raw_txt,
                                           const std::vector<int>& labels, const LossConfig& cfg) {
    const Batch batch{adapter.apply_rows(Tower::Image, raw_img), adapter.apply_rows(Tower::Text, raw_txt), labels};
    const auto r = combined_loss(batch, cfg);
    AdapterBatchLoss out{r.loss, adapter.zeros_like(), r.grad.tau_std};
    adapter.accumulate_grad(Tower::Image, raw_img, r.grad.img, out.grad);
    adapter.accumulate_grad(Tower::Text, raw_txt, r.grad.txt, out.grad);
    return out;
}

namespace detail {

inline std::vector<std::vector<std::span<const float>>> training_texts(const EmbeddingStore& store,
                                                                      std::span<const SampleRecord> samples,
                                                                      const CaptionIndex& captions, CaptionMode mode) {
    std::vector<std::vector<std::span<const float>>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        (void)store.image(s.sample_id);
        std::vector<std::span<const float>> texts;
        if (mode == CaptionMode::Template) {
            texts.push_back(store.template_text(s.class_id));
        } else {
            const auto& group = captions.captions(s.sample_id);
            if (group.empty()) fail(Errc::NoCaptions, "sample '" + s.sample_id + "' has no captions");
            for (const auto& c : group) texts.push_back(store.text(s.sample_id, c.characteristic));
        }
        out.push_back(std::move(texts));
    }
    return out;
}

} // namespace detail

/// Fine-tunes both tower adapters with AdamW under a cosine schedule.
///
/// Each epoch draws one seeded permutation of the samples and a fresh caption
/// per sample; the trailing partial batch is kept. When `val` is non-empty,
/// embedding-average accuracy (template prototypes in template mode) is
/// recorded per epoch and, with BestVal selection, the best epoch's adapters
/// are returned (earliest on ties).
inline TrainResult train(const EmbeddingStore& store, std::span<const SampleRecord> samples,
                         const CaptionIndex& captions, const TrainConfig& cfg,
                         std::span<const SampleRecord> val = {}) {
    cfg.validate();
    if (samples.empty()) fail(Errc::InvalidArgument, "train: no samples");
    const auto texts = detail::training_texts(store, samples, captions, cfg.caption_mode);
    const std::size_t n = samples.size();
    const std::size_t d = store.dim();
    const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;

    Rng rng = Rng::derive(cfg.seed, "trainer");
    const AdamWHyper hyper{0.9, 0.999, 1e-8, cfg.weight_decay};
    const AdamWHyper temp_hyper{0.9, 0.999, 1e-8, 0.0};
    OptimState img_state, txt_state, temp_state;

    TrainResult result{AdapterParams::identity(d), cfg.loss.tau_std, {}, 0};
    double log_tau = std::log(cfg.loss.tau_std);
    std::optional<double> best_val;
    TrainResult best;
    const auto proto_mode = cfg.caption_mode == CaptionMode::Template ? InferenceMode::Template
                                                                      : InferenceMode::EmbeddingAvg;

    std::size_t step = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        std::vector<std::size_t> pick(n);
        for (std::size_t i = 0; i < n; ++i) pick[i] = rng.uniform_index(texts[order[i]].size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = cosine_lr(step, total_steps, cfg.lr, cfg.min_lr);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const std::size_t bn = stop - start;
            Mat raw_img(bn, d), raw_txt(bn, d);
            std::vector<int> labels(bn);
            for (std::size_t r = 0; r < bn; ++r) {
                const auto& s = samples[order[start + r]];
                const auto img = store.image(s.sample_id);
                const auto txt = texts[order[start + r]][pick[start + r]];
                std::copy(img.begin(), img.end(), raw_img.row(r).begin());
                std::copy(txt.begin(), txt.end(), raw_txt.row(r).begin());
                labels[r] = s.class_id;
            }

            LossConfig lc = cfg.loss;
            if (cfg.learn_temperature) lc.tau_std = std::exp(log_tau);
            auto r = adapter_batch_loss(result.adapter, raw_img, raw_txt, labels, lc);

            const double weight = static_cast<double>(bn) / static_cast<double>(n);
            rec.loss.l_i += weight * r.loss.l_i;
            rec.loss.l_t += weight * r.loss.l_t;
            rec.loss.l_std += weight * r.loss.l_std;
            rec.loss.l_sup += weight * r.loss.l_sup;
            rec.loss.total += weight * r.loss.total;

            const double lr_t = cosine_lr(step, total_steps, cfg.lr, cfg.min_lr);
            adamw_step(result.adapter.block(Tower::Image), r.grad.block(Tower::Image), img_state, lr_t, hyper);
            if (!cfg.freeze_text)
                adamw_step(result.adapter.block(Tower::Text), r.grad.block(Tower::Text), txt_state, lr_t, hyper);
            if (cfg.learn_temperature) {
                const double g = lc.tau_std * r.grad_tau_std;  // d/dlog(tau)
                adamw_step(std::span<double>(&log_tau, 1), std::span<const double>(&g, 1), temp_state, lr_t,
                           temp_hyper);
            }
            ++step;
        }
        result.tau_std = cfg.learn_temperature ? std::exp(log_tau) : cfg.loss.tau_std;

        if (!val.empty()) {
            const auto protos = prototypes_from_store(store, samples, captions, &result.adapter, proto_mode);
            rec.val_accuracy = evaluate_samples(store, val, protos, &result.adapter).accuracy;
            if (!best_val || *rec.val_accuracy > *best_val) {
                best_val = rec.val_accuracy;
                best.adapter = result.adapter;
                best.tau_std = result.tau_std;
                best.selected_epoch = epoch;
            }
        }
        result.history.push_back(rec);
    }

    result.selected_epoch = cfg.epochs;
    if (best_val && cfg.selection == CheckpointSelection::BestVal) {
        result.adapter = std::move(best.adapter);
        result.tau_std = best.tau_std;
        result.selected_epoch = best.selected_epoch;
    }
    return result;
}

/// epoch,l_i,l_t,l_std,l_sup,total,lr,val_accuracy with round-trip precision;
/// val_accuracy is empty for epochs without a validation pass.
inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,l_i,l_t,l_std,l_sup,total,lr,val_accuracy\n";
    for (const auto& h : history) {
        out += std::to_string(h.epoch);
        for (double v : {h.loss.l_i, h.loss.l_t, h.loss.l_std, h.loss.l_sup, h.loss.total, h.lr})
            out += "," + format_double(v);
        out += ",";
        if (h.val_accuracy) out += format_double(*h.val_accuracy);
        out += "\n";
    }
    return out;
}

} // namespace capfuse
