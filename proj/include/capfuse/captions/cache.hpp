#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>

#include "json.hpp"

#include "capfuse/captions/hash.hpp"
#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"

namespace capfuse {

/// Content address of one caption request. Fields are length-prefixed so no
/// two distinct tuples can collide by concatenation.
inline std::string cache_key(std::string_view sample_id, Characteristic ch, std::string_view model_id,
                             std::string_view prompt) {
    std::string buf;
    for (std::string_view part : {sample_id, to_string(ch), model_id, prompt}) {
        buf += std::to_string(part.size());
        buf += ':';
        buf += part;
        buf += '\n';
    }
    return sha256_hex(buf);
}

struct CacheEntry {
    std::string key;
    std::string sample_id;
    Characteristic characteristic = Characteristic::Visual;
    std::string model_id;
    std::string prompt;
    std::string text;
    int retries = 0;
};

// One <key>.json file per entry. Writers are serialized and publish through an
// atomic rename, so concurrent readers see either nothing or a whole file.
class CaptionCache {
public:
    explicit CaptionCache(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    const std::filesystem::path& dir() const noexcept { return dir_; }

    std::filesystem::path path_for(std::string_view key) const { return dir_ / (std::string(key) + ".json"); }

    bool contains(std::string_view key) const {
        std::shared_lock lock(mu_);
        return std::filesystem::exists(path_for(key));
    }

    std::optional<CacheEntry> get(std::string_view key) const {
        std::shared_lock lock(mu_);
        std::ifstream in(path_for(key));
        if (!in) return std::nullopt;
        const auto j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded() || j.value("key", std::string()) != key) return std::nullopt;
        try {
            return CacheEntry{j.at("key"),    j.at("sample_id"), parse_characteristic(j.at("characteristic").get<std::string>()),
                              j.at("model_id"), j.at("prompt"),    j.at("text"),
                              j.value("retries", 0)};
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    void put(const CacheEntry& e) {
        const nlohmann::json j = {{"key", e.key},
                                  {"sample_id", e.sample_id},
                                  {"characteristic", to_string(e.characteristic)},
                                  {"model_id", e.model_id},
                                  {"prompt", e.prompt},
                                  {"text", e.text},
                                  {"retries", e.retries}};
        std::unique_lock lock(mu_);
        std::ostringstream tid;
        tid << std::this_thread::get_id();
        const auto tmp = dir_ / (e.key + ".tmp." + tid.str());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) fail(Errc::IoError, "cannot write cache entry " + tmp.string());
            out << j.dump(2) << '\n';
            if (!out) fail(Errc::IoError, "short write to " + tmp.string());
        }
        std::filesystem::rename(tmp, path_for(e.key));
    }

private:
    std::filesystem::path dir_;
    mutable std::shared_mutex mu_;
};

} // namespace capfuse
