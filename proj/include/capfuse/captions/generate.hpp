#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "capfuse/captions/cache.hpp"
#include "capfuse/captions/hash.hpp"
#include "capfuse/captions/prompt.hpp"
#include "capfuse/captions/provider.hpp"
#include "capfuse/dataset/captions.hpp"
#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"

namespace capfuse {

struct ImagePayload {
    std::string base64;
    std::string mime_type = "image/jpeg";
};

using ImageSource = std::function<ImagePayload(const SampleRecord&)>;

inline std::string mime_for(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".webp") return "image/webp";
    if (ext == ".gif") return "image/gif";
    return "image/jpeg";
}

inline ImagePayload load_image_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot read image " + p.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return {base64_encode(bytes), mime_for(p)};
}

struct GenerateOptions {
    std::string domain;
    std::vector<Characteristic> characteristics{kCaptionCharacteristics.begin(), kCaptionCharacteristics.end()};
    ProviderConfig provider;
    std::size_t concurrency = 4;
    bool prefix = true;
    std::uint64_t seed = 0;
    RetryPolicy retry;  // max_retries is taken from provider.max_retries
    Sleeper sleep = real_sleeper();
    Clock clock = steady_clock_seconds();
    ImageSource images;  // empty: prompts are sent without an image part
};

struct GenerateResult {
    std::vector<CaptionRecord> records;  // sorted by (sample_id, characteristic)
    std::vector<int> retries;            // aligned with records
    std::size_t provider_calls = 0;
    std::size_t cache_hits = 0;

    int total_retries() const {
        int s = 0;
        for (int r : retries) s += r;
        return s;
    }
};

inline bool caption_order(const CaptionRecord& a, const CaptionRecord& b) {
    if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
    return a.characteristic < b.characteristic;
}

/// One caption per (sample, characteristic). Raw provider output is kept
/// verbatim (refusals and over-length answers included); final_text is the
/// class prefix plus the raw text, or the raw text alone when prefix is off.
inline GenerateResult generate_captions(const std::vector<SampleRecord>& samples, Provider& provider,
                                        const std::filesystem::path& cache_dir, const GenerateOptions& opt) {
    opt.provider.validate();
    if (opt.characteristics.empty()) fail(Errc::ConfigError, "no caption characteristics requested");
    for (auto ch : opt.characteristics)
        if (ch == Characteristic::Template) fail(Errc::ConfigError, "template is not a caption characteristic");

    struct Job {
        const SampleRecord* sample;
        Characteristic ch;
        std::string prompt;
        std::string key;
    };
    std::vector<Job> jobs;
    for (const auto& s : samples)
        for (auto ch : opt.characteristics) {
            auto prompt = build_prompt(s.class_name, opt.domain, ch);
            auto key = cache_key(s.sample_id, ch, opt.provider.model_id, prompt);
            jobs.push_back({&s, ch, std::move(prompt), std::move(key)});
        }
    std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
        if (a.sample->sample_id != b.sample->sample_id) return a.sample->sample_id < b.sample->sample_id;
        return a.ch < b.ch;
    });
    for (std::size_t i = 1; i < jobs.size(); ++i)
        if (jobs[i].sample->sample_id == jobs[i - 1].sample->sample_id && jobs[i].ch == jobs[i - 1].ch)
            fail(Errc::InvalidArgument, "duplicate sample_id " + jobs[i].sample->sample_id);

    CaptionCache cache(cache_dir);
    const bool incomplete =
        std::any_of(jobs.begin(), jobs.end(), [&](const Job& j) { return !cache.get(j.key).has_value(); });
    if (incomplete && provider.requires_auth()) {
        const char* key = std::getenv(opt.provider.api_key_env.c_str());
        if (!key || !*key)
            fail(Errc::AuthMissing, "cache is incomplete and " + opt.provider.api_key_env + " is not set");
    }

    RateLimiter limiter(opt.provider.rate_limit, 1.0, opt.clock, opt.sleep);
    RetryPolicy policy = opt.retry;
    policy.max_retries = opt.provider.max_retries;
    policy.seed = opt.seed;

    GenerateResult out;
    out.records.resize(jobs.size());
    out.retries.assign(jobs.size(), 0);
    std::atomic<std::size_t> next{0}, calls{0}, hits{0};
    std::atomic<bool> stop{false};
    std::exception_ptr first_error;
    std::mutex err_mu;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size() || stop.load()) return;
            const Job& j = jobs[i];
            try {
                auto entry = cache.get(j.key);
                if (entry) {
                    hits.fetch_add(1);
                } else {
                    ProviderRequest req = user_request(opt.provider, j.prompt);
                    if (opt.images) {
                        auto img = opt.images(*j.sample);
                        if (!img.base64.empty())
                            req.messages[0].parts.push_back(MessagePart::of_image(img.base64, img.mime_type));
                    }
                    limiter.acquire();
                    calls.fetch_add(1);
                    auto r = call_with_retry(provider, req, policy, opt.sleep, "retry:" + j.key);
                    entry = CacheEntry{j.key, j.sample->sample_id, j.ch, opt.provider.model_id, j.prompt, r.text, r.retries};
                    cache.put(*entry);
                }
                CaptionRecord rec;
                rec.sample_id = j.sample->sample_id;
                rec.characteristic = j.ch;
                rec.raw_text = entry->text;
                rec.final_text = opt.prefix ? prepend_prefix(j.sample->class_name, entry->text) : entry->text;
                rec.model_id = opt.provider.model_id;
                rec.prompt_hash = sha256_hex(j.prompt);
                out.records[i] = std::move(rec);
                out.retries[i] = entry->retries;
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!first_error) first_error = std::current_exception();
                stop.store(true);
                return;
            }
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(opt.concurrency, jobs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    out.provider_calls = calls.load();
    out.cache_hits = hits.load();
    return out;
}

/// Writes captions.jsonl as the union of its current contents and `records`
/// (new records replace old ones with the same sample and characteristic),
/// sorted canonically, so reruns with a warm cache are byte-identical.
inline std::vector<CaptionRecord> merge_captions_file(const std::filesystem::path& path,
                                                      const std::vector<CaptionRecord>& records) {
    std::map<std::pair<std::string, Characteristic>, CaptionRecord> merged;
    if (std::filesystem::exists(path))
        for (auto& r : read_captions_jsonl(path)) merged[{r.sample_id, r.characteristic}] = std::move(r);
    for (const auto& r : records) merged[{r.sample_id, r.characteristic}] = r;
    std::vector<CaptionRecord> all;
    for (auto& [k, r] : merged) all.push_back(std::move(r));
    std::sort(all.begin(), all.end(), caption_order);
    write_captions_jsonl(path, all);
    return all;
}

struct ZeroShotAnswer {
    std::string raw;
    std::optional<std::string> class_name;

    bool rejected() const noexcept { return !class_name.has_value(); }
    const std::string& value() const {
        if (!class_name) fail(Errc::Reject, "answer '" + raw + "' is not one of the candidate classes");
        return *class_name;
    }
};

namespace detail {

inline std::string lower_ascii(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

inline std::string trim_ascii(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Maps a free-form answer onto the class list: exact case-insensitive match
/// after trimming whitespace. A single-class list accepts any answer that
/// contains the class name.
inline ZeroShotAnswer match_class_answer(const std::string& raw, const std::vector<std::string>& class_names) {
    if (class_names.empty()) fail(Errc::EmptySlot, "zero-shot class list is empty");
    const std::string a = detail::lower_ascii(detail::trim_ascii(raw));
    for (const auto& c : class_names)
        if (detail::lower_ascii(c) == a) return {raw, c};
    if (class_names.size() == 1 && a.find(detail::lower_ascii(class_names[0])) != std::string::npos)
        return {raw, class_names[0]};
    return {raw, std::nullopt};
}

inline ZeroShotAnswer mllm_zero_shot(const ImagePayload& image, const std::vector<std::string>& class_names,
                                     Provider& provider, const ProviderConfig& cfg, const RetryPolicy& retry = {},
                                     const Sleeper& sleep = real_sleeper()) {
    auto req = user_request(cfg, zero_shot_prompt(class_names), image.base64, image.mime_type);
    RetryPolicy p = retry;
    p.max_retries = cfg.max_retries;
    return match_class_answer(call_with_retry(provider, req, p, sleep, "zero-shot").text, class_names);
}

} // namespace capfuse
