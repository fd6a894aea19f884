// SPDX-License-Identifier: Apache-2.0
//
// The chat-completions backend against an in-process mock provider.
#include "support.hpp"

#include "tts/error.hpp"
#include "tts/http_policy.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <functional>
#include <set>
#include <thread>

using namespace tts;

namespace {

class MockProvider {
public:
    using Handler = std::function<void(const Json& body, httplib::Response& res, int call)>;

    explicit MockProvider(Handler handler) : handler_(std::move(handler))
    {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int call = calls.fetch_add(1);
            {
                std::lock_guard lock(mu_);
                auth_headers.insert(req.get_header_value("Authorization"));
            }
            handler_(Json::parse(req.body), res, call);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockProvider()
    {
        server_.stop();
        thread_.join();
    }

    HttpPolicyConfig config() const
    {
        HttpPolicyConfig c;
        c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
        c.model = "mock-model";
        c.backoff_initial_ms = 1;
        c.timeout_s = 10;
        return c;
    }

    std::atomic<int> calls{0};
    std::set<std::string> auth_headers;

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    std::mutex mu_;
    int port_ = 0;
};

void reply_ok(httplib::Response& res, const std::string& content, std::int64_t completion_tokens = -1,
              const std::string& finish = "stop")
{
    Json body{{"choices", Json::array({Json{{"index", 0},
                                            {"message", Json{{"role", "assistant"}, {"content", content}}},
                                            {"finish_reason", finish}}})}};
    if (completion_tokens >= 0)
        body["usage"] = Json{{"prompt_tokens", 10}, {"completion_tokens", completion_tokens}};
    res.set_content(body.dump(), "application/json");
}

}  // namespace

TEST_CASE("request body follows the chat-completions shape")
{
    HttpPolicyConfig c;
    c.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    c.model = "m";
    HttpPolicy p(c);
    const auto body = p.request_body({.prompt = "hi", .system_prompt = "sys", .max_tokens = 7, .temperature = 0.1,
                                      .seed = 3});
    CHECK(body["model"] == "m");
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == "hi");
    CHECK(body["max_tokens"] == 7);
    CHECK(body["seed"] == 3);
    CHECK(p.request_body({.prompt = "x"})["messages"].size() == 1);
    CHECK_FALSE(p.deterministic());
}

TEST_CASE("usage block is preferred over local counting and clamped to C")
{
    auto reply = [](const std::string& content, std::int64_t tokens, const std::string& finish) {
        httplib::Response res;
        reply_ok(res, content, tokens, finish);
        return Json::parse(res.body);
    };
    CHECK(HttpPolicy::parse_reply(reply("a b c", 11, "stop"), 100).tokens_generated == 11);
    CHECK(HttpPolicy::parse_reply(reply("a b c", -1, "stop"), 100).tokens_generated == 3);
    CHECK(HttpPolicy::parse_reply(reply("a b c", 500, "stop"), 100).tokens_generated == 100);
    const auto cut = HttpPolicy::parse_reply(reply("a b", 40, "length"), 64);
    CHECK(cut.finish_reason == FinishReason::length);
    CHECK(cut.tokens_generated == 64);
    CHECK(HttpPolicy::parse_reply(reply("", 0, "stop"), 64).finish_reason == FinishReason::error);
}

TEST_CASE("one transient 500 in a batch of five is retried")
{
    MockProvider mock([](const Json&, httplib::Response& res, int call) {
        if (call == 0) {
            res.status = 500;
            return;
        }
        reply_ok(res, "*** Final Answer ***\n4\n", 5);
    });
    HttpPolicy p(mock.config());
    const auto batch = p.generate_batch({.prompt = "q", .max_tokens = 64, .seed = 1}, 5);
    REQUIRE(batch.size() == 5);
    CHECK_FALSE(has_partial_failure(batch));
    for (const auto& g : batch) {
        CHECK(g.finish_reason == FinishReason::stop);
        CHECK(g.tokens_generated == 5);
    }
    CHECK(mock.calls.load() == 6);
}

TEST_CASE("exhausted retries surface as partial failure")
{
    MockProvider mock([](const Json& body, httplib::Response& res, int) {
        // Element seeds differ; fail one element persistently.
        if (body["seed"].get<std::uint64_t>() == (batch_element_seed(9, 2) & 0x7fffffffffffffffULL)) {
            res.status = 503;
            return;
        }
        reply_ok(res, "ok", 1);
    });
    HttpPolicy p(mock.config());
    const auto batch = p.generate_batch({.prompt = "q", .max_tokens = 64, .seed = 9}, 5);
    CHECK(has_partial_failure(batch));
    for (int i = 0; i < 5; ++i)
        CHECK((batch[i].finish_reason == FinishReason::error) == (i == 2));
    CHECK(mock.calls.load() == 4 + 3);
}

TEST_CASE("non-transient statuses are rejected without retry")
{
    MockProvider mock([](const Json&, httplib::Response& res, int) {
        res.status = 400;
        res.set_content("{\"error\":\"bad\"}", "application/json");
    });
    HttpPolicy p(mock.config());
    try {
        p.generate({.prompt = "q", .max_tokens = 8});
        FAIL("expected provider_rejected");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::provider_rejected);
    }
    CHECK(mock.calls.load() == 1);
}

TEST_CASE("unreachable endpoint ends in provider_unreachable")
{
    HttpPolicyConfig c;
    httplib::Server probe;
    const int port = probe.bind_to_any_port("127.0.0.1");
    probe.stop();
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    c.backoff_initial_ms = 1;
    c.timeout_s = 2;
    HttpPolicy p(c);
    try {
        p.generate({.prompt = "q", .max_tokens = 8});
        FAIL("expected provider_unreachable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::provider_unreachable);
        CHECK(e.retryable());
    }
}

TEST_CASE("api key is read from the configured environment variable")
{
    ::setenv("TTS_TEST_KEY", "k-123", 1);
    MockProvider mock([](const Json&, httplib::Response& res, int) { reply_ok(res, "x", 1); });
    auto c = mock.config();
    c.api_key_env = "TTS_TEST_KEY";
    HttpPolicy p(c);
    p.generate({.prompt = "q", .max_tokens = 8});
    CHECK(mock.auth_headers.count("Bearer k-123") == 1);
    CHECK(p.describe().dump().find("k-123") == std::string::npos);
}

TEST_CASE("in-flight requests are bounded")
{
    std::atomic<int> now{0}, peak{0};
    MockProvider mock([&](const Json&, httplib::Response& res, int) {
        const int n = ++now;
        int p = peak.load();
        while (n > p && !peak.compare_exchange_weak(p, n)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        --now;
        reply_ok(res, "x", 1);
    });
    auto c = mock.config();
    c.max_in_flight = 2;
    HttpPolicy p(c);
    const auto batch = p.generate_batch({.prompt = "q", .max_tokens = 8}, 6);
    CHECK_FALSE(has_partial_failure(batch));
    CHECK(peak.load() <= 2);
}
