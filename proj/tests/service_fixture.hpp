// SPDX-License-Identifier: Apache-2.0
//
// In-process service with a scripted policy and a small HTTP client.
#pragma once

#include "support.hpp"

#include "tts/service.hpp"

#include <httplib.h>

#include <memory>
#include <string>
#include <thread>

namespace tts::testing {

inline Json human_run_payload(const std::string& run_id, int batch = 3, int turns = 2, std::int64_t timeout_s = 86400)
{
    Json p{{"question", Json{{"id", "q-" + run_id}, {"prompt", "What is 2 + 2?"}, {"domain", "math"}, {"gold_answer", "4"}}},
           {"scaling", Json{{"max_tokens", 64}, {"batch_size", batch}, {"turns", turns},
                            {"strategy", "threeD_human_judge"}, {"seed", 21}}},
           {"policy", Json{{"backend", "scripted"}, {"spec", Json{{"answers", Json{{"4", 0.5}, {"2", 0.5}}}}}}},
           {"judge", Json{{"kind", "oracle"}, {"quality", Json{{"4", 1.0}}}, {"human_timeout_s", timeout_s}}}};
    if (!run_id.empty())
        p["run_id"] = run_id;
    return p;
}

struct HttpReply {
    int status = 0;
    std::string body;
    httplib::Headers headers;

    Json json() const { return Json::parse(body); }
};

class ServiceFixture {
public:
    explicit ServiceFixture(std::filesystem::path store, std::string token = "test-token",
                            std::chrono::milliseconds tick = std::chrono::milliseconds(50))
        : token_(std::move(token))
    {
        ServiceOptions o;
        o.port = 0;
        o.store_dir = std::move(store);
        o.auth_token = token_;
        o.workers = 2;
        o.tick = tick;
        service = std::make_unique<Service>(o);
        service->recover();
        port = service->start();
    }

    ~ServiceFixture() { service->stop(); }

    httplib::Client client(bool with_auth = true) const
    {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(std::chrono::seconds(20));
        if (with_auth)
            c.set_bearer_token_auth(token_);
        return c;
    }

    HttpReply get(const std::string& path, bool with_auth = true) const
    {
        auto c = client(with_auth);
        auto res = c.Get(path);
        if (!res)
            return {};
        return {res->status, res->body, res->headers};
    }

    HttpReply post(const std::string& path, const std::string& body, bool with_auth = true) const
    {
        auto c = client(with_auth);
        auto res = c.Post(path, body, "application/json");
        if (!res)
            return {};
        return {res->status, res->body, res->headers};
    }

    HttpReply post(const std::string& path, const Json& body) const { return post(path, body.dump()); }

    /// Reads an event stream until the server closes it.
    std::string stream(const std::string& path) const
    {
        auto c = client();
        std::string out;
        c.Get(path, [&](const char* data, std::size_t n) {
            out.append(data, n);
            return true;
        });
        return out;
    }

    std::unique_ptr<Service> service;
    int port = 0;

private:
    std::string token_;
};

/// Sequence numbers of the frames in an event-stream body.
inline std::vector<std::int64_t> stream_ids(const std::string& body)
{
    std::vector<std::int64_t> ids;
    std::size_t pos = 0;
    while ((pos = body.find("id: ", pos)) != std::string::npos) {
        const bool line_start = pos == 0 || body[pos - 1] == '\n';
        pos += 4;
        if (line_start)
            ids.push_back(std::stoll(body.substr(pos, body.find('\n', pos) - pos)));
    }
    return ids;
}

}  // namespace tts::testing
