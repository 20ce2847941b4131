#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "capfuse/captions/hash.hpp"
#include "capfuse/error.hpp"
#include "capfuse/rng.hpp"

namespace capfuse {

struct ProviderConfig {
    std::string endpoint_url;
    std::string model_id = "mock";
    std::string api_style = "neutral";  // neutral | openai | gemini
    double temperature = 0.2;
    int max_retries = 3;
    double rate_limit = 0.0;  // requests per second, 0 = unlimited
    std::string api_key_env = "CAPFUSE_API_KEY";
    double timeout_seconds = 60.0;

    void validate() const {
        if (!(temperature >= 0.0 && temperature <= 2.0)) fail(Errc::ConfigError, "temperature must be in [0, 2]");
        if (max_retries < 0) fail(Errc::ConfigError, "max_retries must be >= 0");
        if (!(rate_limit >= 0.0) || !std::isfinite(rate_limit)) fail(Errc::ConfigError, "rate_limit must be >= 0");
        if (model_id.empty()) fail(Errc::ConfigError, "model_id is empty");
    }
};

struct MessagePart {
    std::string text;          // set for text parts
    std::string image_base64;  // set for image parts
    std::string mime_type;

    bool is_image() const noexcept { return !image_base64.empty(); }
    static MessagePart of_text(std::string t) { return {std::move(t), {}, {}}; }
    static MessagePart of_image(std::string b64, std::string mime) { return {{}, std::move(b64), std::move(mime)}; }
};

struct Message {
    std::string role = "user";
    std::vector<MessagePart> parts;
};

/// Neutral request shape; per-provider adapters translate it on the wire.
struct ProviderRequest {
    std::string model;
    double temperature = 0.2;
    std::vector<Message> messages;

    std::string first_text() const {
        for (const auto& m : messages)
            for (const auto& p : m.parts)
                if (!p.is_image()) return p.text;
        return {};
    }
};

inline nlohmann::json to_json(const ProviderRequest& r) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : r.messages) {
        nlohmann::json parts = nlohmann::json::array();
        for (const auto& p : m.parts) {
            if (p.is_image())
                parts.push_back({{"image_base64", p.image_base64}, {"mime_type", p.mime_type}});
            else
                parts.push_back({{"text", p.text}});
        }
        msgs.push_back({{"role", m.role}, {"parts", parts}});
    }
    return {{"model", r.model}, {"temperature", r.temperature}, {"messages", msgs}};
}

inline ProviderRequest user_request(const ProviderConfig& cfg, std::string prompt, std::string image_b64 = {},
                                    std::string mime = "image/jpeg") {
    Message m;
    m.parts.push_back(MessagePart::of_text(std::move(prompt)));
    if (!image_b64.empty()) m.parts.push_back(MessagePart::of_image(std::move(image_b64), std::move(mime)));
    return {cfg.model_id, cfg.temperature, {std::move(m)}};
}

/// Provider failure. Transient ones (network, 429, 5xx) are retried.
class ProviderFailure : public Error {
public:
    ProviderFailure(const std::string& what, bool transient, std::optional<double> retry_after = std::nullopt,
                    int status = 0)
        : Error(Errc::ProviderError, what), transient_(transient), retry_after_(retry_after), status_(status) {}

    bool transient() const noexcept { return transient_; }
    std::optional<double> retry_after() const noexcept { return retry_after_; }
    int status() const noexcept { return status_; }

private:
    bool transient_;
    std::optional<double> retry_after_;
    int status_;
};

class Provider {
public:
    virtual ~Provider() = default;
    /// Returns the model's text answer or throws ProviderFailure. Must be thread-safe.
    virtual std::string complete(const ProviderRequest& request) = 0;
    virtual bool requires_auth() const { return false; }
    virtual std::string name() const = 0;
};

// Offline provider: the answer is a fixed function of the request contents.
class MockProvider : public Provider {
public:
    using Responder = std::function<std::string(const ProviderRequest&)>;

    MockProvider() = default;
    explicit MockProvider(Responder r) : responder_(std::move(r)) {}

    std::string complete(const ProviderRequest& request) override {
        calls_.fetch_add(1);
        if (responder_) return responder_(request);
        return default_text(request);
    }
    std::string name() const override { return "mock"; }
    std::size_t calls() const noexcept { return calls_.load(); }

    static std::string default_text(const ProviderRequest& request) {
        static constexpr const char* kWords[] = {"bright", "curved", "smooth", "striped", "dark",   "narrow",
                                                 "round",  "fuzzy",  "glossy", "pointed", "pale",  "layered",
                                                 "dense",  "spotted", "broad", "textured"};
        const std::string h = sha256_hex(to_json(request).dump());
        std::string out = "Mock description " + h.substr(0, 8) + ":";
        for (std::size_t i = 0; i < 8; ++i) {
            const auto nibble = static_cast<std::size_t>(std::stoi(h.substr(8 + i, 1), nullptr, 16));
            out += ' ';
            out += kWords[nibble];
        }
        return out + ".";
    }

private:
    Responder responder_;
    std::atomic<std::size_t> calls_{0};
};

/// Replays a fixed sequence of outcomes (text or failure), then repeats the last.
class ScriptedProvider : public Provider {
public:
    struct Step {
        std::optional<std::string> text;
        bool transient = true;
        std::optional<double> retry_after;
    };

    explicit ScriptedProvider(std::vector<Step> steps) : steps_(std::move(steps)) {
        if (steps_.empty()) fail(Errc::InvalidArgument, "scripted provider needs at least one step");
    }

    std::string complete(const ProviderRequest&) override {
        std::lock_guard lock(mu_);
        const Step& s = steps_[std::min(next_, steps_.size() - 1)];
        ++next_;
        if (s.text) return *s.text;
        throw ProviderFailure("scripted failure", s.transient, s.retry_after, s.transient ? 503 : 400);
    }
    std::string name() const override { return "scripted"; }
    std::size_t calls() const {
        std::lock_guard lock(mu_);
        return next_;
    }

private:
    std::vector<Step> steps_;
    std::size_t next_ = 0;
    mutable std::mutex mu_;
};

using Sleeper = std::function<void(double seconds)>;

inline Sleeper real_sleeper() {
    return [](double s) {
        if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
    };
}

struct RetryPolicy {
    int max_retries = 3;
    double base_delay = 0.5;
    double max_delay = 30.0;
    double jitter = 0.25;  // multiplicative, delay *= 1 + jitter * U[0,1)
    std::uint64_t seed = 0;
};

/// Delay before retry number `attempt` (0-based): retry-after when the server
/// gave one, else min(max_delay, base * 2^attempt) with seeded jitter.
inline double backoff_delay(const RetryPolicy& p, int attempt, std::optional<double> retry_after, Rng& rng) {
    const double j = 1.0 + p.jitter * rng.uniform01();
    if (retry_after && *retry_after >= 0.0) return *retry_after;
    return std::min(p.max_delay, p.base_delay * std::ldexp(1.0, attempt)) * j;
}

struct RetryOutcome {
    std::string text;
    int retries = 0;
};

inline RetryOutcome call_with_retry(Provider& provider, const ProviderRequest& req, const RetryPolicy& policy,
                                    const Sleeper& sleep, std::string_view stream = "retry") {
    Rng rng = Rng::derive(policy.seed, stream);
    for (int attempt = 0;; ++attempt) {
        try {
            return {provider.complete(req), attempt};
        } catch (const ProviderFailure& f) {
            if (!f.transient() || attempt >= policy.max_retries)
                throw ProviderFailure(std::string(f.what()) + " (after " + std::to_string(attempt) + " retries)", false,
                                      std::nullopt, f.status());
            sleep(backoff_delay(policy, attempt, f.retry_after(), rng));
        }
    }
}

using Clock = std::function<double()>;

inline Clock steady_clock_seconds() {
    return [] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
}

// Token bucket: `rate` tokens per second, capacity `burst`. acquire() blocks
// (through the sleeper) until a token is available.
class RateLimiter {
public:
    RateLimiter(double rate, double burst = 1.0, Clock clock = steady_clock_seconds(), Sleeper sleep = real_sleeper())
        : rate_(rate), burst_(std::max(1.0, burst)), clock_(std::move(clock)), sleep_(std::move(sleep)),
          tokens_(burst_), last_(clock_()) {}

    void acquire() {
        if (rate_ <= 0.0) return;
        for (;;) {
            double wait = 0.0;
            {
                std::lock_guard lock(mu_);
                const double now = clock_();
                tokens_ = std::min(burst_, tokens_ + (now - last_) * rate_);
                last_ = now;
                if (tokens_ >= 1.0) {
                    tokens_ -= 1.0;
                    return;
                }
                wait = (1.0 - tokens_) / rate_;
            }
            sleep_(wait);
        }
    }

private:
    double rate_;
    double burst_;
    Clock clock_;
    Sleeper sleep_;
    double tokens_;
    double last_;
    std::mutex mu_;
};

} // namespace capfuse
