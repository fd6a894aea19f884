// SPDX-License-Identifier: Apache-2.0
//
// Append-only event store: one newline-delimited JSON file per run under
// <root>/runs/. Each line is
//   {"schema_version":1,"seq":N,"ts":"...Z","type":"...","payload":{...}}
// and records are rebuilt by folding the lines through apply_event.
#pragma once

#include "tts/engine.hpp"

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace tts {

struct StoredEvent {
    int schema_version = kEventSchemaVersion;
    std::int64_t seq = 0;
    std::string ts;
    std::string type;
    Json payload;
};

Json to_json(const StoredEvent& e);

struct RunFilter {
    std::optional<RunStatus> status;
    std::optional<Strategy> strategy;
    std::optional<std::string> question_id;
};

struct RunSummary {
    std::string run_id;
    std::string question_id;
    Strategy strategy = Strategy::context;
    RunStatus status = RunStatus::running;
    std::string created_at;
    std::int64_t total_tokens_generated = 0;
};

Json to_json(const RunSummary& s);

/// Run ids are restricted to [A-Za-z0-9._-] so they map safely to file names.
bool valid_run_id(std::string_view id);

class EventStore final : public EventSink {
public:
    explicit EventStore(std::filesystem::path root, bool durable = true);

    const std::filesystem::path& root() const { return root_; }

    /// run_created must be the first event of a run and creates its log;
    /// any other event needs an existing log (not_found otherwise).
    std::int64_t append(const std::string& run_id, std::string_view type, const Json& payload) override;

    bool exists(const std::string& run_id) const;

    /// Events with seq > from_seq. A torn final line (crash mid-write) is
    /// ignored; any other unparseable line raises corrupt_log naming the
    /// first bad sequence number.
    std::vector<StoredEvent> read_events(const std::string& run_id, std::int64_t from_seq = 0) const;

    RunRecord load_run(const std::string& run_id) const;

    /// Payload of the run's run_created event.
    Json creation_payload(const std::string& run_id) const;

    /// Matching runs, newest first.
    std::vector<RunSummary> list_runs(const RunFilter& filter = {}) const;

    /// Blocks until the run has an event with seq > after_seq or the timeout
    /// passes; returns true when such an event exists.
    bool wait_for_events(const std::string& run_id, std::int64_t after_seq, std::chrono::milliseconds timeout) const;

private:
    std::filesystem::path log_path(const std::string& run_id) const;
    std::int64_t recover_tail(const std::string& run_id);

    std::filesystem::path root_;
    bool durable_;
    mutable std::mutex mu_;
    mutable std::condition_variable appended_;
    std::map<std::string, std::int64_t, std::less<>> last_seq_;
};

}  // namespace tts
