// SPDX-License-Identifier: Apache-2.0
//
// OpenAI-style chat-completions backend.
#pragma once

#include "tts/policy.hpp"

#include <memory>
#include <semaphore>
#include <string>

namespace tts {

struct HttpPolicyConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model;
    std::string api_key_env = "TTS_API_KEY";  // name of the variable holding the key
    int max_in_flight = 8;
    int max_attempts = 3;
    int backoff_initial_ms = 500;
    double timeout_s = 600.0;
};

void to_json(Json& j, const HttpPolicyConfig& v);
void from_json(const Json& j, HttpPolicyConfig& v);

class HttpPolicy final : public Policy {
public:
    explicit HttpPolicy(HttpPolicyConfig config);
    ~HttpPolicy() override;

    /// Transient failures (connection errors, 408, 429, 5xx) are retried with
    /// exponential backoff and end in provider_unreachable; other non-2xx
    /// statuses raise provider_rejected at once.
    Generation generate(const PolicyRequest& request) override;

    /// Elements run concurrently, bounded by max_in_flight.
    std::vector<Generation> generate_batch(const PolicyRequest& request, int count) override;

    bool deterministic() const override { return false; }
    Json describe() const override;

    const HttpPolicyConfig& config() const { return config_; }

    /// Request body sent for one generation.
    Json request_body(const PolicyRequest& request) const;

    /// Maps a provider reply to a Generation; tokens never exceed max_tokens.
    static Generation parse_reply(const Json& reply, std::int64_t max_tokens);

private:
    Generation attempt(const PolicyRequest& request);

    HttpPolicyConfig config_;
    std::string origin_;
    std::string path_;
    std::string api_key_;
    std::unique_ptr<std::counting_semaphore<>> slots_;
};

}  // namespace tts
