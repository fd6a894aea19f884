// SPDX-License-Identifier: Apache-2.0
//
// HTTP API for run control and human-judge sessions.
//
//   POST /v1/runs                          create and schedule a run
//   GET  /v1/runs/{id}                     record view (long texts elided)
//   GET  /v1/runs/{id}/responses/{rid}     one full response
//   GET  /v1/runs/{id}/events?from={seq}   server-sent events with seq > from
//   GET  /v1/sessions?state=pending        sessions, oldest first
//   GET  /v1/sessions/{id}                 one session with its candidates
//   POST /v1/sessions/{id}/decision        {positive_index, negative_index}
#pragma once

#include "tts/experiment.hpp"
#include "tts/judge.hpp"
#include "tts/store.hpp"

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace tts {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string auth_token;  // empty disables auth
    std::filesystem::path store_dir = "tts-store";
    int workers = 0;  // 0: hardware concurrency
    std::chrono::milliseconds tick{1000};
    std::optional<std::string> prompt_registry;
    std::size_t elide_threshold = 4096;
};

/// Parses an RFC-3339 UTC timestamp as written by to_rfc3339.
std::optional<Clock::time_point> parse_rfc3339(std::string_view text);

class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Re-lists parked runs as pending sessions and reschedules running runs.
    /// Returns the number of runs recovered.
    int recover();

    /// Binds the listening socket; throws storage_io when the address is busy.
    int bind();

    /// Serves until stop(); bind() first.
    void serve();

    /// bind + serve on a background thread.
    int start();

    /// Stops accepting requests, drains scheduled work and stops the ticker.
    /// Parked runs stay parked in the store.
    void stop();

    int port() const;

    /// Blocks until no run work is queued or executing.
    void wait_idle();

    EventStore& store();
    SessionManager& sessions();

    /// Creates a run from a single-question experiment payload. Throws
    /// invalid_config (message lists violations).
    std::string create_run(const Json& payload);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tts
