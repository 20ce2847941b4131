#include "config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>

#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"

namespace capfuse::cli {

const std::vector<KeyInfo>& config_keys() {
    static const std::vector<KeyInfo> keys = {
        {"seed", 0, "root seed; every stochastic component derives its stream from it"},
        {"name", "", "run label used by `report`"},
        {"method", "", "series label in the `report` accuracy-vs-shots plot (default w=<loss.w>)"},
        {"out", "run", "run directory"},
        {"store", "", "embedding store directory (manifest.json + embeddings.bin)"},
        {"captions", "", "captions.jsonl"},
        {"samples", "", "sample manifest for caption generation and MLLM zero-shot"},
        {"domain", "", "domain slot of the caption prompt; falls back to the manifest's domain"},
        {"prefix", true, "prepend \"a photo of a <class>. \" to generated captions"},
        {"captions.characteristics", "visual,shape,texture", "comma-separated caption characteristics"},
        {"cache_dir", "", "caption cache directory (default <out>/cache)"},
        {"provider", "mock", "mock | http"},
        {"provider.endpoint", "", "provider URL for the http provider"},
        {"provider.model", "mock", "model id sent to the provider and part of the cache key"},
        {"provider.api_style", "neutral", "neutral | openai | gemini"},
        {"provider.temperature", 0.2, "sampling temperature in [0, 2]"},
        {"provider.max_retries", 3, "retries for transient provider failures"},
        {"provider.rate_limit", 0.0, "requests per second, 0 = unlimited"},
        {"provider.api_key_env", "CAPFUSE_API_KEY", "environment variable holding the API key"},
        {"provider.concurrency", 4, "maximum in-flight provider requests"},
        {"provider.timeout", 60.0, "per-request timeout in seconds"},
        {"train.lr", 1e-5, "peak learning rate"},
        {"train.min_lr", 0.0, "cosine schedule floor"},
        {"train.weight_decay", 1e-4, "AdamW decoupled weight decay"},
        {"train.epochs", 50, "training epochs"},
        {"train.batch_size", 64, "batch size"},
        {"train.caption_mode", "generated", "generated | template"},
        {"train.learn_temperature", false, "learn the standard-loss temperature"},
        {"train.freeze_text", false, "keep the text adapter at identity"},
        {"train.selection", "best_val", "best_val | final"},
        {"loss.w", 0.2, "weight of the supervised loss"},
        {"loss.tau_std", 0.07, "standard-loss temperature"},
        {"loss.tau_sup", 1.0, "supervised-loss temperature"},
        {"loss.direction", "img_to_txt", "img_to_txt | symmetric"},
        {"fewshot.k", "full", "shots per class, or \"full\""},
        {"fewshot.selection", "", "selection file written by `fewshot sample`"},
        {"infer.mode", "embedding_avg", "embedding_avg | logit_avg | nearest | template (zeroshot also: mllm)"},
        {"eval.split", "test", "split evaluated by `eval` and `zeroshot`"},
        {"checkpoint", "", "checkpoint directory used by `eval`"},
        {"bpe", "", "BPE merges file (plain or .gz) for `analyze captions`"},
        {"sweep.steps", 10, "w grid is {i / steps : i = 0..steps}"},
        {"synth.classes", 10, "synthetic: number of classes"},
        {"synth.dim", 32, "synthetic: embedding dimension"},
        {"synth.sigma", 0.3, "synthetic: per-coordinate noise"},
        {"synth.captions_per_image", 3, "synthetic: captions per image (1..3)"},
        {"synth.train_per_class", 16, "synthetic: train images per class"},
        {"synth.val_per_class", 0, "synthetic: val images per class"},
        {"synth.test_per_class", 50, "synthetic: test images per class"},
    };
    return keys;
}

namespace {

const KeyInfo& info(const std::string& key) {
    for (const auto& k : config_keys())
        if (k.key == key) return k;
    fail(Errc::ConfigError, "unknown config key '" + key + "'");
}

nlohmann::json coerce(const std::string& key, const nlohmann::json& v) {
    const auto& d = info(key).default_value;
    if (key == "fewshot.k") {
        if ((v.is_string() && v.get<std::string>() == "full") || (v.is_number_integer() && v.get<std::int64_t>() >= 1))
            return v;
        fail(Errc::ConfigError, "fewshot.k must be a positive integer or \"full\"");
    }
    if (d.is_boolean() && v.is_boolean()) return v;
    if (d.is_number_integer() && v.is_number_integer()) return v;
    if (d.is_number_float() && v.is_number()) return v.get<double>();
    if (d.is_string() && v.is_string()) return v;
    fail(Errc::ConfigError, "config key '" + key + "' expects a " + std::string(d.type_name()) + ", got " + v.dump());
}

nlohmann::json parse_value(const std::string& key, const std::string& s) {
    const auto& d = info(key).default_value;
    if (key == "fewshot.k") {
        if (s == "full") return "full";
        return coerce(key, parse_value("train.epochs", s));
    }
    if (d.is_boolean()) {
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        fail(Errc::ConfigError, key + " expects true or false, got '" + s + "'");
    }
    if (d.is_number_integer()) {
        char* end = nullptr;
        errno = 0;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (s.empty() || *end != '\0' || errno) fail(Errc::ConfigError, key + " expects an integer, got '" + s + "'");
        return v;
    }
    if (d.is_number()) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || *end != '\0') fail(Errc::ConfigError, key + " expects a number, got '" + s + "'");
        return v;
    }
    return s;
}

} // namespace

RunConfig::RunConfig() : values_(nlohmann::json::object()) {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::ConfigError, "cannot open config file " + path.string());
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(Errc::ConfigError, path.string() + " is not a JSON object");
    merge_json(j);
}

void RunConfig::merge_json(const nlohmann::json& flat) {
    for (auto it = flat.begin(); it != flat.end(); ++it) set_json(it.key(), it.value());
}

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = parse_value(key, value); }

void RunConfig::set_json(const std::string& key, const nlohmann::json& value) {
    if (value.is_object() || value.is_array())
        fail(Errc::ConfigError, "config is flat; key '" + key + "' must hold a scalar");
    values_[key] = coerce(key, value);
}

std::string RunConfig::str(const std::string& key) const { return values_.at(key).get<std::string>(); }
double RunConfig::num(const std::string& key) const { return values_.at(key).get<double>(); }
std::int64_t RunConfig::integer(const std::string& key) const { return values_.at(key).get<std::int64_t>(); }
bool RunConfig::flag(const std::string& key) const { return values_.at(key).get<bool>(); }

std::uint64_t RunConfig::seed() const {
    const auto s = integer("seed");
    if (s < 0) fail(Errc::ConfigError, "seed must be >= 0");
    return static_cast<std::uint64_t>(s);
}

std::filesystem::path RunConfig::path(const std::string& key) const { return str(key); }

std::filesystem::path RunConfig::require_path(const std::string& key) const {
    const auto p = path(key);
    if (p.empty()) fail(Errc::ConfigError, "config key '" + key + "' is required (use --" + key + " or --set)");
    if (!std::filesystem::exists(p)) fail(Errc::ConfigError, key + " path does not exist: " + p.string());
    return p;
}

namespace {

std::size_t positive(const RunConfig& c, const std::string& key, bool allow_zero = false) {
    const auto v = c.integer(key);
    if (v < (allow_zero ? 0 : 1)) fail(Errc::ConfigError, key + " must be " + (allow_zero ? ">= 0" : ">= 1"));
    return static_cast<std::size_t>(v);
}

template <typename F>
auto config_parse(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        fail(Errc::ConfigError, key + ": " + e.what());
    }
}

} // namespace

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.lr = num("train.lr");
    t.min_lr = num("train.min_lr");
    t.weight_decay = num("train.weight_decay");
    t.epochs = positive(*this, "train.epochs");
    t.batch_size = positive(*this, "train.batch_size");
    t.seed = seed();
    t.caption_mode = config_parse("train.caption_mode", [&] { return parse_caption_mode(str("train.caption_mode")); });
    t.learn_temperature = flag("train.learn_temperature");
    t.freeze_text = flag("train.freeze_text");
    t.selection = config_parse("train.selection", [&] { return parse_selection(str("train.selection")); });
    t.loss.w = num("loss.w");
    t.loss.tau_std = num("loss.tau_std");
    t.loss.tau_sup = num("loss.tau_sup");
    t.loss.direction = config_parse("loss.direction", [&] { return parse_sup_direction(str("loss.direction")); });
    config_parse("train", [&] {
        t.validate();
        return 0;
    });
    return t;
}

ProviderConfig RunConfig::provider_config() const {
    ProviderConfig p;
    p.endpoint_url = str("provider.endpoint");
    p.model_id = str("provider.model");
    p.api_style = str("provider.api_style");
    p.temperature = num("provider.temperature");
    p.max_retries = static_cast<int>(positive(*this, "provider.max_retries", true));
    p.rate_limit = num("provider.rate_limit");
    p.api_key_env = str("provider.api_key_env");
    p.timeout_seconds = num("provider.timeout");
    p.validate();
    return p;
}

FewShotSpec RunConfig::few_shot() const {
    const auto& k = values_.at("fewshot.k");
    if (k.is_string()) return FewShotSpec::full(seed());
    return FewShotSpec::shots(static_cast<std::size_t>(k.get<std::int64_t>()), seed());
}

InferenceMode RunConfig::inference_mode() const {
    return config_parse("infer.mode", [&] { return parse_inference_mode(str("infer.mode")); });
}

SyntheticSpec RunConfig::synthetic_spec() const {
    SyntheticSpec s;
    s.classes = positive(*this, "synth.classes");
    s.dim = positive(*this, "synth.dim");
    s.sigma = num("synth.sigma");
    s.captions_per_image = positive(*this, "synth.captions_per_image");
    s.train_per_class = positive(*this, "synth.train_per_class", true);
    s.val_per_class = positive(*this, "synth.val_per_class", true);
    s.test_per_class = positive(*this, "synth.test_per_class", true);
    s.seed = seed();
    if (!(s.sigma >= 0.0)) fail(Errc::ConfigError, "synth.sigma must be >= 0");
    return s;
}

std::vector<Characteristic> RunConfig::characteristics() const {
    std::vector<Characteristic> out;
    const std::string s = str("captions.characteristics");
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!part.empty())
            out.push_back(config_parse("captions.characteristics", [&] { return parse_characteristic(part); }));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) fail(Errc::ConfigError, "captions.characteristics is empty");
    return out;
}

void RunConfig::echo(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    detail::write_text_file(dir / "config-echo.json", values_.dump(2) + "\n");
}

} // namespace capfuse::cli
