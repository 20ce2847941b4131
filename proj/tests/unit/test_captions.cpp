#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include "capfuse/captions/generate.hpp"
#include "capfuse/captions/http_provider.hpp"
#include "support/tempdir.hpp"

using namespace capfuse;

TEST(Prompt, ExactTemplateText) {
    EXPECT_EQ(build_prompt("daisy", "flowers", "visual"),
              "To differentiate this daisy photo from other flowers photos, describe its primary visual "
              "characteristics based on the photo in 50 words.");
    EXPECT_EQ(build_prompt("banded", "textures", Characteristic::Texture),
              "To differentiate this banded photo from other textures photos, describe its primary texture "
              "characteristics based on the photo in 50 words.");
}

TEST(Prompt, EmptySlots) {
    for (auto [c, d, ch] : {std::tuple{"", "flowers", "visual"}, {"daisy", "", "visual"}, {"daisy", "flowers", ""}}) {
        try {
            build_prompt(c, d, ch);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::EmptySlot);
        }
    }
}

TEST(Prompt, SlotsAppearOnce) {
    const auto p = build_prompt("zebra", "animals", Characteristic::Shape);
    for (std::string slot : {"zebra", "animals", "shape"}) {
        const auto first = p.find(slot);
        ASSERT_NE(first, std::string::npos);
        EXPECT_EQ(p.find(slot, first + 1), std::string::npos);
    }
}

TEST(Prompt, Prefix) {
    EXPECT_EQ(prepend_prefix("daisy", "White petals..."), "a photo of a daisy. White petals...");
    EXPECT_EQ(prepend_prefix("cat", ""), "a photo of a cat. ");
    EXPECT_THROW(prepend_prefix("", "x"), Error);
}

TEST(Prompt, ZeroShot) {
    EXPECT_EQ(zero_shot_prompt({"daisy", "rose"}),
              "Select the most appropriate category for the image from the following options: daisy, rose. Write "
              "only the category name.");
}

TEST(CacheKey, ChangesWithEveryField) {
    const auto base = cache_key("s1", Characteristic::Visual, "m", "p");
    EXPECT_EQ(base, cache_key("s1", Characteristic::Visual, "m", "p"));
    EXPECT_EQ(base.size(), 64u);
    EXPECT_NE(base, cache_key("s2", Characteristic::Visual, "m", "p"));
    EXPECT_NE(base, cache_key("s1", Characteristic::Shape, "m", "p"));
    EXPECT_NE(base, cache_key("s1", Characteristic::Visual, "m2", "p"));
    EXPECT_NE(base, cache_key("s1", Characteristic::Visual, "m", "p2"));
    EXPECT_NE(cache_key("ab", Characteristic::Visual, "c", "p"), cache_key("a", Characteristic::Visual, "bc", "p"));
}

TEST(Hash, KnownVectors) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
    EXPECT_EQ(base64_encode(""), "");
}

TEST(Cache, RoundTripAndOverwrite) {
    test::TempDir tmp;
    CaptionCache c(tmp.path() / "cache");
    EXPECT_FALSE(c.get("k").has_value());
    c.put({"k", "s", Characteristic::Shape, "m", "p", "text \"quoted\"\n", 2});
    const auto e = c.get("k");
    ASSERT_TRUE(e);
    EXPECT_EQ(e->text, "text \"quoted\"\n");
    EXPECT_EQ(e->characteristic, Characteristic::Shape);
    EXPECT_EQ(e->retries, 2);
    c.put({"k", "s", Characteristic::Shape, "m", "p", "new", 0});
    EXPECT_EQ(c.get("k")->text, "new");
    for (auto& f : std::filesystem::directory_iterator(c.dir())) EXPECT_EQ(f.path().extension(), ".json");
}

TEST(Cache, ConcurrentWriters) {
    test::TempDir tmp;
    CaptionCache c(tmp.path());
    std::vector<std::thread> ts;
    for (int t = 0; t < 8; ++t)
        ts.emplace_back([&, t] {
            for (int i = 0; i < 20; ++i) {
                c.put({"k" + std::to_string(i), "s", Characteristic::Visual, "m", "p", "t" + std::to_string(t), 0});
                EXPECT_TRUE(c.get("k" + std::to_string(i)).has_value());
            }
        });
    for (auto& t : ts) t.join();
    for (int i = 0; i < 20; ++i) EXPECT_TRUE(c.get("k" + std::to_string(i)));
}

namespace {

std::vector<SampleRecord> samples(std::size_t n) {
    std::vector<SampleRecord> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({"img" + std::to_string(i), static_cast<int>(i % 2), i % 2 ? "rose" : "daisy", Split::Train});
    return out;
}

GenerateOptions opts() {
    GenerateOptions o;
    o.domain = "flowers";
    o.sleep = [](double) {};
    return o;
}

} // namespace

TEST(Generate, MockSixRecordsThenWarmCache) {
    test::TempDir tmp;
    MockProvider mock;
    const auto s = samples(2);
    const auto a = generate_captions(s, mock, tmp.path(), opts());
    ASSERT_EQ(a.records.size(), 6u);
    EXPECT_EQ(mock.calls(), 6u);
    EXPECT_EQ(a.provider_calls, 6u);
    const std::regex prefix("^a photo of a .+\\. ");
    for (const auto& r : a.records) {
        EXPECT_TRUE(std::regex_search(r.final_text, prefix)) << r.final_text;
        EXPECT_EQ(r.final_text, prepend_prefix(r.sample_id == "img0" ? "daisy" : "rose", r.raw_text));
    }
    EXPECT_EQ(a.records[0].sample_id, "img0");
    EXPECT_EQ(a.records[0].characteristic, Characteristic::Visual);
    EXPECT_EQ(a.records[2].characteristic, Characteristic::Texture);

    const auto b = generate_captions(s, mock, tmp.path(), opts());
    EXPECT_EQ(mock.calls(), 6u);
    EXPECT_EQ(b.cache_hits, 6u);
    EXPECT_EQ(captions_to_jsonl(a.records), captions_to_jsonl(b.records));
}

TEST(Generate, NoPrefixMode) {
    test::TempDir tmp;
    MockProvider mock;
    auto o = opts();
    o.prefix = false;
    const auto r = generate_captions(samples(1), mock, tmp.path(), o);
    for (const auto& c : r.records) EXPECT_EQ(c.final_text, c.raw_text);
}

TEST(Generate, DistinctCaptionsPerCharacteristic) {
    test::TempDir tmp;
    MockProvider mock;
    const auto r = generate_captions(samples(1), mock, tmp.path(), opts());
    EXPECT_NE(r.records[0].raw_text, r.records[1].raw_text);
    EXPECT_NE(r.records[1].raw_text, r.records[2].raw_text);
}

TEST(Generate, RetriesTransientFailures) {
    test::TempDir tmp;
    ScriptedProvider p({{std::nullopt}, {std::nullopt, true, 1.5}, {"ok"}});
    std::vector<double> slept;
    auto o = opts();
    o.characteristics = {Characteristic::Visual};
    o.provider.max_retries = 3;
    o.sleep = [&](double s) { slept.push_back(s); };
    const auto r = generate_captions(samples(1), p, tmp.path(), o);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].raw_text, "ok");
    EXPECT_EQ(r.retries[0], 2);
    ASSERT_EQ(slept.size(), 2u);
    EXPECT_GE(slept[0], 0.5);
    EXPECT_LT(slept[0], 0.5 * 1.25);
    EXPECT_EQ(slept[1], 1.5);  // retry-after wins
}

TEST(Generate, RetriesExhausted) {
    test::TempDir tmp;
    ScriptedProvider p({{std::nullopt}});
    auto o = opts();
    o.provider.max_retries = 2;
    o.concurrency = 1;
    try {
        generate_captions(samples(1), p, tmp.path(), o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ProviderError);
    }
    EXPECT_EQ(p.calls(), 3u);
}

TEST(Generate, PermanentFailureIsNotRetried) {
    test::TempDir tmp;
    ScriptedProvider p({{std::nullopt, false}});
    auto o = opts();
    o.concurrency = 1;
    EXPECT_THROW(generate_captions(samples(1), p, tmp.path(), o), Error);
    EXPECT_EQ(p.calls(), 1u);
}

TEST(Generate, BackoffGrowsAndCaps) {
    RetryPolicy p;
    p.jitter = 0.0;
    p.max_delay = 3.0;
    Rng rng(0);
    EXPECT_EQ(backoff_delay(p, 0, std::nullopt, rng), 0.5);
    EXPECT_EQ(backoff_delay(p, 1, std::nullopt, rng), 1.0);
    EXPECT_EQ(backoff_delay(p, 2, std::nullopt, rng), 2.0);
    EXPECT_EQ(backoff_delay(p, 3, std::nullopt, rng), 3.0);
}

TEST(Generate, AuthMissingOnlyWhenCacheIncomplete) {
    test::TempDir tmp;
    ProviderConfig cfg;
    cfg.endpoint_url = "http://127.0.0.1:1/v1";
    cfg.api_key_env = "CAPFUSE_TEST_KEY_UNSET";
    ::unsetenv("CAPFUSE_TEST_KEY_UNSET");
    HttpProvider http(cfg);
    auto o = opts();
    o.provider = cfg;
    try {
        generate_captions(samples(1), http, tmp.path(), o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::AuthMissing);
    }
    // Warm the cache with the same model id, then the http provider is never contacted.
    MockProvider mock;
    generate_captions(samples(1), mock, tmp.path(), o);
    const auto r = generate_captions(samples(1), http, tmp.path(), o);
    EXPECT_EQ(r.cache_hits, 3u);
    EXPECT_EQ(r.provider_calls, 0u);
}

TEST(Generate, ConcurrencyDoesNotChangeOutput) {
    test::TempDir a, b;
    MockProvider m1, m2;
    auto o = opts();
    o.concurrency = 1;
    const auto r1 = generate_captions(samples(7), m1, a.path(), o);
    o.concurrency = 8;
    const auto r2 = generate_captions(samples(7), m2, b.path(), o);
    EXPECT_EQ(captions_to_jsonl(r1.records), captions_to_jsonl(r2.records));
}

TEST(Generate, MergeFileIsIdempotent) {
    test::TempDir tmp;
    MockProvider mock;
    const auto path = tmp.path() / "captions.jsonl";
    const auto r = generate_captions(samples(3), mock, tmp.path() / "cache", opts());
    merge_captions_file(path, r.records);
    std::ifstream f1(path);
    const std::string first((std::istreambuf_iterator<char>(f1)), {});
    merge_captions_file(path, r.records);
    std::ifstream f2(path);
    const std::string second((std::istreambuf_iterator<char>(f2)), {});
    EXPECT_EQ(first, second);
    EXPECT_EQ(read_captions_jsonl(path).size(), 9u);
}

TEST(RateLimiter, TokenBucketWithFakeClock) {
    double now = 0.0;
    std::vector<double> waits;
    RateLimiter rl(2.0, 1.0, [&] { return now; }, [&](double s) {
        waits.push_back(s);
        now += s;
    });
    rl.acquire();
    EXPECT_TRUE(waits.empty());
    rl.acquire();
    ASSERT_EQ(waits.size(), 1u);
    EXPECT_DOUBLE_EQ(waits[0], 0.5);
    now += 10.0;
    rl.acquire();  // bucket refilled but capped at one token
    EXPECT_EQ(waits.size(), 1u);
    rl.acquire();
    EXPECT_EQ(waits.size(), 2u);
}

TEST(ZeroShot, Matching) {
    const std::vector<std::string> classes{"daisy", "rose"};
    EXPECT_EQ(match_class_answer("Daisy", classes).value(), "daisy");
    EXPECT_EQ(match_class_answer("  ROSE\n", classes).value(), "rose");
    const auto r = match_class_answer("sunflower-ish", classes);
    EXPECT_TRUE(r.rejected());
    EXPECT_EQ(r.raw, "sunflower-ish");
    try {
        (void)r.value();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::Reject);
    }
    EXPECT_TRUE(match_class_answer("a daisy", classes).rejected());
    EXPECT_EQ(match_class_answer("It is a Daisy, clearly.", {"daisy"}).value(), "daisy");
}

TEST(ZeroShot, ThroughProvider) {
    MockProvider mock([](const ProviderRequest& r) {
        EXPECT_NE(r.first_text().find("options: daisy, rose."), std::string::npos);
        EXPECT_EQ(r.messages[0].parts.size(), 2u);
        return std::string("Daisy");
    });
    ProviderConfig cfg;
    const auto a = mllm_zero_shot({"aGk=", "image/png"}, {"daisy", "rose"}, mock, cfg);
    EXPECT_EQ(a.value(), "daisy");
}

class LocalServer {
public:
    explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> h) {
        srv_.Post(R"(/.*)", [h](const httplib::Request& q, httplib::Response& r) { h(q, r); });
        port_ = srv_.bind_to_any_port("127.0.0.1");
        th_ = std::thread([this] { srv_.listen_after_bind(); });
        srv_.wait_until_ready();
    }
    ~LocalServer() {
        srv_.stop();
        th_.join();
    }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

private:
    httplib::Server srv_;
    int port_ = 0;
    std::thread th_;
};

TEST(HttpProvider, OpenAiStyleRoundTrip) {
    std::atomic<int> hits{0};
    LocalServer server([&](const httplib::Request& q, httplib::Response& r) {
        ++hits;
        EXPECT_EQ(q.get_header_value("Authorization"), "Bearer secret");
        const auto body = nlohmann::json::parse(q.body);
        EXPECT_EQ(body["model"], "gpt-test");
        EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.2);
        EXPECT_EQ(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,aGk=");
        r.set_content(R"({"choices":[{"message":{"content":"Five white petals."}}]})", "application/json");
    });
    ::setenv("CAPFUSE_TEST_KEY", "secret", 1);
    ProviderConfig cfg;
    cfg.endpoint_url = server.url("/v1/chat/completions");
    cfg.api_style = "openai";
    cfg.model_id = "gpt-test";
    cfg.api_key_env = "CAPFUSE_TEST_KEY";
    HttpProvider p(cfg);
    EXPECT_EQ(p.complete(user_request(cfg, "describe", "aGk=", "image/png")), "Five white petals.");
    EXPECT_EQ(hits.load(), 1);
}

TEST(HttpProvider, GeminiStyleAndRetryAfter) {
    std::atomic<int> hits{0};
    LocalServer server([&](const httplib::Request& q, httplib::Response& r) {
        if (hits++ == 0) {
            r.status = 429;
            r.set_header("Retry-After", "2");
            return;
        }
        EXPECT_EQ(q.path, "/v1beta/models/gem:generateContent");
        EXPECT_EQ(q.get_header_value("x-goog-api-key"), "secret");
        const auto body = nlohmann::json::parse(q.body);
        EXPECT_EQ(body["contents"][0]["parts"][0]["text"], "describe");
        r.set_content(R"({"candidates":[{"content":{"parts":[{"text":"Round "},{"text":"petals."}]}}]})",
                      "application/json");
    });
    ::setenv("CAPFUSE_TEST_KEY", "secret", 1);
    ProviderConfig cfg;
    cfg.endpoint_url = server.url("/v1beta/models/{model}:generateContent");
    cfg.api_style = "gemini";
    cfg.model_id = "gem";
    cfg.api_key_env = "CAPFUSE_TEST_KEY";
    HttpProvider p(cfg);
    std::vector<double> slept;
    const auto r = call_with_retry(p, user_request(cfg, "describe"), {}, [&](double s) { slept.push_back(s); });
    EXPECT_EQ(r.text, "Round petals.");
    EXPECT_EQ(r.retries, 1);
    ASSERT_EQ(slept.size(), 1u);
    EXPECT_EQ(slept[0], 2.0);
}

TEST(HttpProvider, ClientErrorIsPermanent) {
    LocalServer server([](const httplib::Request&, httplib::Response& r) {
        r.status = 401;
        r.set_content("denied", "text/plain");
    });
    ::setenv("CAPFUSE_TEST_KEY", "secret", 1);
    ProviderConfig cfg;
    cfg.endpoint_url = server.url("/x");
    cfg.api_key_env = "CAPFUSE_TEST_KEY";
    HttpProvider p(cfg);
    try {
        p.complete(user_request(cfg, "hi"));
        FAIL();
    } catch (const ProviderFailure& f) {
        EXPECT_FALSE(f.transient());
        EXPECT_EQ(f.status(), 401);
    }
}
