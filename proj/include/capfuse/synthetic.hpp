#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "capfuse/dataset/store.hpp"
#include "capfuse/dataset/types.hpp"
#include "capfuse/linalg.hpp"
#include "capfuse/rng.hpp"

namespace capfuse {

// Gaussian class clusters on the unit sphere. Each class has a random unit
// mean; every image and caption embedding is normalize(mean + sigma * z) with
// independent z ~ N(0, I), so images and their captions share only the class.
struct SyntheticSpec {
    std::size_t classes = 10;
    std::size_t dim = 32;
    double sigma = 0.3;
    std::size_t captions_per_image = 3;
    std::size_t train_per_class = 16;
    std::size_t val_per_class = 0;
    std::size_t test_per_class = 50;
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    EmbeddingStore store;
    std::vector<CaptionRecord> captions;
    std::vector<std::vector<double>> class_means;
};

inline SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.captions_per_image < 1 || spec.captions_per_image > 3)
        fail(Errc::InvalidArgument, "synthetic captions_per_image must be 1..3");
    Rng rng = Rng::derive(spec.seed, "synthetic");
    std::vector<std::string> names;
    for (std::size_t k = 0; k < spec.classes; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "class_%02zu", k);
        names.emplace_back(buf);
    }
    SyntheticDataset out{EmbeddingStore(spec.dim, "synthetic-gaussian-v1", names), {}, {}};

    auto gaussian = [&] {
        std::vector<double> v(spec.dim);
        for (double& x : v) x = rng.normal();
        return v;
    };
    for (std::size_t k = 0; k < spec.classes; ++k) {
        const auto u = l2_normalize(std::span<const double>(gaussian()));
        out.class_means.emplace_back(u.values().begin(), u.values().end());
    }
    auto around = [&](std::size_t k) {
        auto z = gaussian();
        for (std::size_t i = 0; i < spec.dim; ++i) z[i] = out.class_means[k][i] + spec.sigma * z[i];
        const auto u = l2_normalize(std::span<const double>(z));
        return std::vector<float>(u.values().begin(), u.values().end());
    };

    for (std::size_t k = 0; k < spec.classes; ++k) out.store.add_template(static_cast<int>(k), around(k));

    const std::pair<Split, std::size_t> splits[] = {
        {Split::Train, spec.train_per_class}, {Split::Val, spec.val_per_class}, {Split::Test, spec.test_per_class}};
    for (const auto& [split, per_class] : splits)
        for (std::size_t k = 0; k < spec.classes; ++k)
            for (std::size_t i = 0; i < per_class; ++i) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%s_c%02zu_%04zu", std::string(to_string(split)).c_str(), k, i);
                const std::string id = buf;
                out.store.add_image(id, static_cast<int>(k), split, around(k));
                for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
                    const auto ch = kCaptionCharacteristics[c];
                    out.store.add_text(id, ch, around(k));
                    const std::string raw = "synthetic " + std::string(to_string(ch)) + " description.";
                    out.captions.push_back(
                        {id, ch, raw, "a photo of a " + names[k] + ". " + raw, "synthetic", ""});
                }
            }
    return out;
}

} // namespace capfuse
