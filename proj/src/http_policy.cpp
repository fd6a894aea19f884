// SPDX-License-Identifier: Apache-2.0
#include "tts/http_policy.hpp"
#include "tts/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

namespace tts {

namespace {

struct TransientFailure {
    std::string message;
};

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

void to_json(Json& j, const HttpPolicyConfig& v)
{
    j = Json{{"endpoint", v.endpoint},
             {"model", v.model},
             {"api_key_env", v.api_key_env},
             {"max_in_flight", v.max_in_flight},
             {"max_attempts", v.max_attempts},
             {"backoff_initial_ms", v.backoff_initial_ms},
             {"timeout_s", v.timeout_s}};
}

void from_json(const Json& j, HttpPolicyConfig& v)
{
    HttpPolicyConfig d;
    v.endpoint = j.value("endpoint", d.endpoint);
    v.model = j.value("model", d.model);
    v.api_key_env = j.value("api_key_env", d.api_key_env);
    v.max_in_flight = j.value("max_in_flight", d.max_in_flight);
    v.max_attempts = j.value("max_attempts", d.max_attempts);
    v.backoff_initial_ms = j.value("backoff_initial_ms", d.backoff_initial_ms);
    v.timeout_s = j.value("timeout_s", d.timeout_s);
}

HttpPolicy::HttpPolicy(HttpPolicyConfig config) : config_(std::move(config))
{
    if (config_.max_in_flight < 1 || config_.max_attempts < 1)
        throw Error(ErrorCode::invalid_config, "max_in_flight and max_attempts must be at least 1");
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorCode::invalid_config, "endpoint must be an absolute URL: " + config_.endpoint);
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    origin_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
    if (!config_.api_key_env.empty())
        if (const char* key = std::getenv(config_.api_key_env.c_str()))
            api_key_ = key;
    slots_ = std::make_unique<std::counting_semaphore<>>(config_.max_in_flight);
}

HttpPolicy::~HttpPolicy() = default;

Json HttpPolicy::request_body(const PolicyRequest& request) const
{
    Json messages = Json::array();
    if (!request.system_prompt.empty())
        messages.push_back(Json{{"role", "system"}, {"content", request.system_prompt}});
    messages.push_back(Json{{"role", "user"}, {"content", request.prompt}});
    return Json{{"model", config_.model},
                {"messages", std::move(messages)},
                {"max_tokens", request.max_tokens},
                {"temperature", request.temperature},
                {"seed", request.seed & 0x7fffffffffffffffULL}};
}

Generation HttpPolicy::parse_reply(const Json& reply, std::int64_t max_tokens)
{
    const auto& choice = reply.at("choices").at(0);
    Generation g;
    const auto& content = choice.at("message").at("content");
    g.text = content.is_string() ? content.get<std::string>() : std::string{};
    const auto finish = choice.value("finish_reason", std::string("stop"));
    g.finish_reason = finish == "length" ? FinishReason::length : FinishReason::stop;

    std::int64_t tokens = -1;
    if (reply.contains("usage") && reply["usage"].is_object())
        tokens = reply["usage"].value("completion_tokens", std::int64_t{-1});
    if (tokens < 0)
        tokens = count_tokens(g.text);
    if (g.finish_reason == FinishReason::length)
        tokens = max_tokens;
    g.tokens_generated = std::clamp<std::int64_t>(tokens, 0, max_tokens);
    if (g.text.empty() && g.finish_reason != FinishReason::length) {
        g.finish_reason = FinishReason::error;
        g.error = "provider returned empty content";
    }
    return g;
}

Generation HttpPolicy::attempt(const PolicyRequest& request)
{
    httplib::Client client(origin_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(std::min(timeout, std::chrono::duration<double>(30.0))));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    httplib::Headers headers;
    if (!api_key_.empty())
        headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(path_, headers, request_body(request).dump(), "application/json");
    if (!res)
        throw TransientFailure{"request failed: " + httplib::to_string(res.error())};
    if (transient_status(res->status))
        throw TransientFailure{"provider status " + std::to_string(res->status)};
    if (res->status < 200 || res->status >= 300)
        throw Error(ErrorCode::provider_rejected,
                    "provider status " + std::to_string(res->status) + ": " + res->body.substr(0, 512));
    try {
        return parse_reply(Json::parse(res->body), request.max_tokens);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::provider_rejected, std::string("malformed provider reply: ") + e.what());
    }
}

Generation HttpPolicy::generate(const PolicyRequest& request)
{
    if (request.max_tokens < 1)
        throw Error(ErrorCode::invalid_config, "max_tokens must be at least 1");
    slots_->acquire();
    struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
    } release{*slots_};

    std::string last;
    auto backoff = std::chrono::milliseconds(config_.backoff_initial_ms);
    for (int i = 0; i < config_.max_attempts; ++i) {
        if (i > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        try {
            return attempt(request);
        } catch (const TransientFailure& f) {
            last = f.message;
        }
    }
    throw Error(ErrorCode::provider_unreachable,
                "gave up after " + std::to_string(config_.max_attempts) + " attempts: " + last);
}

std::vector<Generation> HttpPolicy::generate_batch(const PolicyRequest& request, int count)
{
    std::vector<Generation> out(static_cast<std::size_t>(std::max(count, 0)));
    std::vector<std::thread> workers;
    workers.reserve(out.size());
    for (int i = 0; i < count; ++i) {
        workers.emplace_back([this, &request, &out, i] {
            PolicyRequest sub = request;
            sub.seed = batch_element_seed(request.seed, i);
            auto& slot = out[static_cast<std::size_t>(i)];
            try {
                slot = generate(sub);
            } catch (const std::exception& e) {
                slot = Generation{};
                slot.finish_reason = FinishReason::error;
                slot.error = e.what();
            }
        });
    }
    for (auto& w : workers)
        w.join();
    return out;
}

Json HttpPolicy::describe() const
{
    return Json{{"backend", "http"}, {"endpoint", config_.endpoint}, {"model", config_.model}};
}

}  // namespace tts
