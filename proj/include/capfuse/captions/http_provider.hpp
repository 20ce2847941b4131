#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "capfuse/captions/provider.hpp"
#include "capfuse/error.hpp"

namespace capfuse {

namespace detail {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) fail(Errc::ConfigError, "endpoint_url needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::optional<double> parse_retry_after(const httplib::Response& res) {
    if (!res.has_header("Retry-After")) return std::nullopt;
    const std::string v = res.get_header_value("Retry-After");
    char* end = nullptr;
    const double s = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || s < 0) return std::nullopt;
    return s;
}

} // namespace detail

/// Wire body for one of the supported provider schemas.
inline nlohmann::json wire_body(const ProviderRequest& r, const std::string& style) {
    if (style == "neutral") return to_json(r);
    if (style == "openai") {
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : r.messages) {
            nlohmann::json content = nlohmann::json::array();
            for (const auto& p : m.parts) {
                if (p.is_image())
                    content.push_back(
                        {{"type", "image_url"},
                         {"image_url", {{"url", "data:" + p.mime_type + ";base64," + p.image_base64}}}});
                else
                    content.push_back({{"type", "text"}, {"text", p.text}});
            }
            msgs.push_back({{"role", m.role}, {"content", content}});
        }
        return {{"model", r.model}, {"temperature", r.temperature}, {"messages", msgs}};
    }
    if (style == "gemini") {
        nlohmann::json contents = nlohmann::json::array();
        for (const auto& m : r.messages) {
            nlohmann::json parts = nlohmann::json::array();
            for (const auto& p : m.parts) {
                if (p.is_image())
                    parts.push_back({{"inline_data", {{"mime_type", p.mime_type}, {"data", p.image_base64}}}});
                else
                    parts.push_back({{"text", p.text}});
            }
            contents.push_back({{"role", m.role}, {"parts", parts}});
        }
        return {{"contents", contents}, {"generationConfig", {{"temperature", r.temperature}}}};
    }
    fail(Errc::ConfigError, "unknown api_style: " + style);
}

/// Extracts the answer text from a provider response body.
inline std::string wire_answer(const nlohmann::json& body, const std::string& style) {
    try {
        if (style == "neutral") return body.at("text").get<std::string>();
        if (style == "openai") {
            const auto& content = body.at("choices").at(0).at("message").at("content");
            if (content.is_string()) return content.get<std::string>();
            std::string out;
            for (const auto& part : content) out += part.value("text", "");
            return out;
        }
        if (style == "gemini") {
            std::string out;
            for (const auto& part : body.at("candidates").at(0).at("content").at("parts")) out += part.value("text", "");
            return out;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ProviderFailure(std::string("malformed provider response: ") + e.what(), false);
    }
    fail(Errc::ConfigError, "unknown api_style: " + style);
}

// POSTs one request per call. The API key is read from the configured
// environment variable at call time and sent as a bearer token (neutral,
// openai) or x-goog-api-key header (gemini).
class HttpProvider : public Provider {
public:
    explicit HttpProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.endpoint_url.empty()) fail(Errc::ConfigError, "endpoint_url is required for the http provider");
        wire_body(ProviderRequest{}, cfg_.api_style);
        url_ = detail::split_url(cfg_.endpoint_url);
    }

    bool requires_auth() const override { return true; }
    std::string name() const override { return "http:" + cfg_.api_style; }

    std::string complete(const ProviderRequest& request) override {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (!key || !*key) fail(Errc::AuthMissing, "environment variable " + cfg_.api_key_env + " is not set");

        httplib::Client cli(url_.origin);
        const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
        cli.set_connection_timeout(secs, 0);
        cli.set_read_timeout(secs, 0);
        cli.set_write_timeout(secs, 0);
        httplib::Headers headers;
        std::string path = url_.path;
        if (cfg_.api_style == "gemini") {
            headers.emplace("x-goog-api-key", key);
            if (path.find("{model}") != std::string::npos) path.replace(path.find("{model}"), 7, request.model);
        } else {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        const auto res = cli.Post(path, headers, wire_body(request, cfg_.api_style).dump(), "application/json");
        if (!res) throw ProviderFailure("request failed: " + httplib::to_string(res.error()), true);
        if (res->status == 429 || res->status >= 500)
            throw ProviderFailure("provider returned HTTP " + std::to_string(res->status), true,
                                  detail::parse_retry_after(*res), res->status);
        if (res->status < 200 || res->status >= 300)
            throw ProviderFailure("provider returned HTTP " + std::to_string(res->status) + ": " + res->body, false,
                                  std::nullopt, res->status);
        const auto body = nlohmann::json::parse(res->body, nullptr, false);
        if (body.is_discarded()) throw ProviderFailure("provider response is not JSON", false, std::nullopt, res->status);
        return wire_answer(body, cfg_.api_style);
    }

private:
    ProviderConfig cfg_;
    detail::SplitUrl url_;
};

} // namespace capfuse
