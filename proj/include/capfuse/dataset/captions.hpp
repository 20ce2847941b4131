#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"
#include "capfuse/rng.hpp"

namespace capfuse {

inline nlohmann::json to_json(const CaptionRecord& c) {
    return {{"sample_id", c.sample_id},   {"characteristic", to_string(c.characteristic)},
            {"raw_text", c.raw_text},     {"final_text", c.final_text},
            {"model_id", c.model_id},     {"prompt_hash", c.prompt_hash}};
}

inline CaptionRecord caption_from_json(const nlohmann::json& j) {
    CaptionRecord c;
    c.sample_id = j.at("sample_id").get<std::string>();
    c.characteristic = parse_characteristic(j.at("characteristic").get<std::string>());
    c.raw_text = j.value("raw_text", std::string());
    c.final_text = j.at("final_text").get<std::string>();
    c.model_id = j.value("model_id", std::string());
    c.prompt_hash = j.value("prompt_hash", std::string());
    return c;
}

/// One JSON object per line, fixed key order, UTF-8.
inline std::string captions_to_jsonl(const std::vector<CaptionRecord>& records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
}

inline void write_captions_jsonl(const std::filesystem::path& path, const std::vector<CaptionRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + path.string());
    out << captions_to_jsonl(records);
}

inline std::vector<CaptionRecord> read_captions_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open " + path.string());
    std::vector<CaptionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) fail(Errc::IoError, path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
        try {
            out.push_back(caption_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            fail(Errc::IoError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

/// Captions grouped by sample, each group in characteristic order.
class CaptionIndex {
public:
    CaptionIndex() = default;
    explicit CaptionIndex(const std::vector<CaptionRecord>& records) {
        for (const auto& r : records) by_sample_[r.sample_id].push_back(r);
        for (auto& [id, group] : by_sample_)
            std::stable_sort(group.begin(), group.end(),
                             [](const auto& a, const auto& b) { return a.characteristic < b.characteristic; });
    }

    const std::vector<CaptionRecord>& captions(const std::string& sample_id) const {
        static const std::vector<CaptionRecord> kEmpty;
        auto it = by_sample_.find(sample_id);
        return it == by_sample_.end() ? kEmpty : it->second;
    }

    std::size_t size() const noexcept { return by_sample_.size(); }

    /// Uniform choice among the sample's captions.
    const CaptionRecord& pick_caption(const std::string& sample_id, Rng& rng) const {
        const auto& group = captions(sample_id);
        if (group.empty()) fail(Errc::NoCaptions, "sample '" + sample_id + "' has no captions");
        return group[rng.uniform_index(group.size())];
    }

private:
    std::map<std::string, std::vector<CaptionRecord>> by_sample_;
};

} // namespace capfuse
