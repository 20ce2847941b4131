#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "capfuse/captions/generate.hpp"
#include "capfuse/dataset/sampling.hpp"
#include "capfuse/infer/prototypes.hpp"
#include "capfuse/synthetic.hpp"
#include "capfuse/train/trainer.hpp"

namespace capfuse::cli {

struct KeyInfo {
    std::string key;
    nlohmann::json default_value;
    std::string help;
};

/// Every recognised configuration key with its default and meaning.
const std::vector<KeyInfo>& config_keys();

// Flat key/value configuration. Layers apply in order: defaults, config
// file, --set overrides, then dedicated flags.
class RunConfig {
public:
    RunConfig();

    void merge_file(const std::filesystem::path& path);
    void merge_json(const nlohmann::json& flat);
    void set(const std::string& key, const std::string& value);  // typed by the key's default
    void set_json(const std::string& key, const nlohmann::json& value);

    const nlohmann::json& raw() const noexcept { return values_; }
    std::string str(const std::string& key) const;
    double num(const std::string& key) const;
    std::int64_t integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::uint64_t seed() const;

    std::filesystem::path out_dir() const { return str("out"); }
    std::filesystem::path path(const std::string& key) const;           // "" if unset
    std::filesystem::path require_path(const std::string& key) const;   // must exist

    TrainConfig train_config() const;
    ProviderConfig provider_config() const;
    FewShotSpec few_shot() const;
    InferenceMode inference_mode() const;
    SyntheticSpec synthetic_spec() const;
    std::vector<Characteristic> characteristics() const;

    /// Writes the effective configuration, keys sorted, to <out>/config-echo.json.
    void echo(const std::filesystem::path& dir) const;

private:
    nlohmann::json values_;
};

} // namespace capfuse::cli
