// SPDX-License-Identifier: Apache-2.0
//
// Turn-level (positive, negative) selection for 3D scaling. The LLM judge
// picks the positive with the best-of-N protocol and draws the negative
// uniformly from the rest; human judges pick both through sessions.
#pragma once

#include "tts/aggregate.hpp"
#include "tts/core.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace tts {

struct JudgeResult {
    JudgeDecision decision;
    AggregationOutcome outcome;  // kind judge_pair, negative_id set
};

/// Requires at least two candidates. The negative is
/// rest[uniform_index(negative_seed, B - 1)] where rest is the candidates
/// without the positive, in generation order.
JudgeResult llm_judge(const Question& question, std::span<const Response> candidates, Policy& judge,
                      const SelectionProfile& profile, const PromptRegistry& prompts,
                      const JudgeQueryOptions& options, std::uint64_t negative_seed);

enum class SessionState { pending, decided, expired };

std::string_view to_string(SessionState s);

struct SessionCandidate {
    std::string response_id;
    std::string text;
};

using Clock = std::chrono::system_clock;

struct JudgeSession {
    std::string session_id;
    std::string run_id;
    int turn_index = 1;
    std::string question;
    std::vector<SessionCandidate> candidates;
    SessionState state = SessionState::pending;
    std::int64_t timeout_s = 86400;
    Clock::time_point opened_at;
    std::optional<JudgeDecision> decision;

    Clock::time_point deadline() const { return opened_at + std::chrono::seconds(timeout_s); }
};

/// Summary view; candidate texts are included.
Json session_json(const JudgeSession& s);

std::string session_id_for(std::string_view run_id, int turn_index);

/// Thread-safe registry of human-judge sessions. Map access is guarded by a
/// shared lock; submit and expire on one session are mutually exclusive.
class SessionManager {
public:
    /// Called once a session leaves the pending state (decided or expired),
    /// outside any lock.
    using Listener = std::function<void(const JudgeSession&)>;

    void set_listener(Listener listener);

    /// Throws duplicate_open when the (run, turn) session exists and
    /// invalid_state for fewer than two candidates.
    JudgeSession open_session(const std::string& run_id, int turn_index, std::string question,
                              std::vector<SessionCandidate> candidates, std::int64_t timeout_s,
                              Clock::time_point now = Clock::now());

    /// Errors: not_found, session_not_pending, index_out_of_range,
    /// indices_equal. A pending session already past its deadline is expired
    /// first and then rejected as not pending.
    JudgeDecision submit_decision(const std::string& session_id, int positive_index, int negative_index,
                                  Clock::time_point now = Clock::now());

    /// Pending sessions whose deadline has passed become expired.
    std::vector<std::string> expire_sessions(Clock::time_point now = Clock::now());

    std::optional<JudgeSession> get(const std::string& session_id) const;

    /// Sessions ordered oldest first, optionally filtered by state.
    std::vector<JudgeSession> list(std::optional<SessionState> state = std::nullopt) const;

    /// Re-registers a session (recovery after restart); replaces an existing one.
    void restore(JudgeSession session);

private:
    struct Entry {
        std::mutex mu;
        JudgeSession session;
        std::uint64_t order = 0;
    };

    void notify(const JudgeSession& s) const;

    mutable std::shared_mutex map_mu_;
    std::map<std::string, std::shared_ptr<Entry>, std::less<>> sessions_;
    std::uint64_t next_order_ = 0;
    mutable std::mutex listener_mu_;
    Listener listener_;
};

}  // namespace tts
