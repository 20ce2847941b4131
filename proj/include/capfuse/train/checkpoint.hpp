#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/train/adapter.hpp"
#include "capfuse/train/trainer.hpp"

namespace capfuse {

inline constexpr const char* kCheckpointManifest = "checkpoint.json";
inline constexpr const char* kCheckpointBlob = "checkpoint.bin";

struct Checkpoint {
    AdapterParams adapter;
    double tau_std = 0.07;
    std::size_t epoch = 0;
    nlohmann::json config;
};

/// checkpoint.json (dims, config, seed, epoch) + checkpoint.bin holding the
/// adapter values as f32le in [W_img | b_img | W_txt | b_txt] order.
inline void save_checkpoint(const std::filesystem::path& dir, const AdapterParams& adapter, double tau_std,
                            std::size_t epoch, const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    const nlohmann::json m = {{"version", 1},
                              {"dtype", "f32le"},
                              {"dim", adapter.dim()},
                              {"param_count", adapter.values().size()},
                              {"layout", {"W_img", "b_img", "W_txt", "b_txt"}},
                              {"tau_std", tau_std},
                              {"epoch", epoch},
                              {"seed", cfg.seed},
                              {"config", to_json(cfg)}};
    detail::write_text_file(dir / kCheckpointManifest, m.dump(2) + "\n");
    std::vector<float> f(adapter.values().begin(), adapter.values().end());
    std::ofstream out(dir / kCheckpointBlob, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + (dir / kCheckpointBlob).string());
    detail::write_f32le(out, f);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / kCheckpointManifest);
    if (!in) fail(Errc::IoError, "cannot open " + (dir / kCheckpointManifest).string());
    auto m = nlohmann::json::parse(in, nullptr, false);
    if (m.is_discarded() || m.value("version", -1) != 1 || m.value("dtype", std::string()) != "f32le")
        fail(Errc::BadMagic, "not a capfuse checkpoint: " + dir.string());
    try {
        const auto dim = m.at("dim").get<std::size_t>();
        const auto floats = detail::read_f32le(detail::read_bytes(dir / kCheckpointBlob));
        if (floats.size() != 2 * AdapterParams::block_size(dim))
            fail(Errc::TruncatedBlob, "checkpoint blob has " + std::to_string(floats.size()) + " values");
        return {AdapterParams::from_values(dim, std::vector<double>(floats.begin(), floats.end())),
                m.at("tau_std").get<double>(), m.at("epoch").get<std::size_t>(), m.at("config")};
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::CorruptManifest, e.what());
    }
}

} // namespace capfuse
