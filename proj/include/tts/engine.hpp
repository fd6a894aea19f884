// SPDX-License-Identifier: Apache-2.0
//
// The scaling runners. A run is a small state machine over its RunRecord:
//
//   generate turn t  ->  close turn t (aggregate | judge | park for a human)
//        ^                          |
//        +------- t < T ------------+----> complete
//
// Every state change is an event. The engine persists each event through an
// EventSink and applies it to the in-memory record with the same fold the
// store uses to rebuild records from disk.
#pragma once

#include "tts/aggregate.hpp"
#include "tts/judge.hpp"
#include "tts/policy.hpp"
#include "tts/prompts.hpp"
#include "tts/verifier.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tts {

inline constexpr int kEventSchemaVersion = 1;

namespace event {
inline constexpr std::string_view run_created = "run_created";
inline constexpr std::string_view responses_generated = "responses_generated";
inline constexpr std::string_view aggregation_done = "aggregation_done";
inline constexpr std::string_view session_opened = "session_opened";
inline constexpr std::string_view decision_recorded = "decision_recorded";
inline constexpr std::string_view run_completed = "run_completed";
inline constexpr std::string_view run_failed = "run_failed";
}  // namespace event

class EventSink {
public:
    virtual ~EventSink() = default;

    /// Durably appends one event and returns its sequence number.
    virtual std::int64_t append(const std::string& run_id, std::string_view type, const Json& payload) = 0;
};

/// Applies one event to a record. Pure; shared by the engine and the store.
/// Throws corrupt_log when the event does not fit the record.
void apply_event(RunRecord& record, std::string_view type, const Json& payload);

struct RunEnvironment {
    Policy* policy = nullptr;
    Policy* judge_policy = nullptr;        // defaults to `policy`
    const Verifier* ground_truth = nullptr;  // fills final_score
    const Verifier* task_scorer = nullptr;   // batch_bon_scoring
    PromptRegistry prompts = PromptRegistry::defaults();
    EventSink* sink = nullptr;
    SessionManager* sessions = nullptr;    // threeD_human_judge
    int regenerate_attempts = 2;
    std::string refinement_profile = "default";
    std::int64_t human_timeout_s = 86400;
};

/// Refinement prompt for the next turn. The negative section is omitted when
/// `negative` is null; the history section is rendered only by profiles with
/// history enabled. With `inject_markers`, kPositiveMarker follows the
/// positive section and kNegativeMarker the negative section.
std::string compose_refinement_prompt(const Question& question, const Response& positive, const Response* negative,
                                      const RefinementProfile& profile, const PromptRegistry& prompts,
                                      bool inject_markers, const std::vector<const Response*>& history = {});

class Engine {
public:
    explicit Engine(RunEnvironment env);

    const RunEnvironment& env() const { return env_; }

    /// Validates the config and emits run_created. Throws invalid_config with
    /// every violation, scorer_missing when a scoring strategy has no scorer.
    RunRecord start(const std::string& run_id, const Question& question, const ScalingConfig& config);

    /// Steps until the run completes, fails or parks awaiting a human.
    void advance(RunRecord& record, const Question& question);

    /// start + advance.
    RunRecord run(const std::string& run_id, const Question& question, const ScalingConfig& config);

    /// Closes a parked turn with an external decision and continues.
    /// Throws invalid_state if the run is not awaiting a decision.
    void apply_decision(RunRecord& record, const Question& question, const JudgeDecision& decision);

    /// Closes a parked turn with the LLM judge (recorded as fallback).
    void resume_with_fallback(RunRecord& record, const Question& question);

    /// The recording halves of apply_decision / resume_with_fallback: emit
    /// decision_recorded without advancing.
    void record_decision(RunRecord& record, const JudgeDecision& decision);
    void record_fallback(RunRecord& record, const Question& question);

    /// Payload of the run_created event.
    Json creation_payload(const std::string& run_id, const Question& question, const ScalingConfig& config) const;

private:
    void emit(RunRecord& record, std::string_view type, const Json& payload);
    bool turn_closed(const RunRecord& record, const TurnRecord& turn) const;
    void generate_turn(RunRecord& record, const Question& question);
    void close_turn(RunRecord& record, const Question& question);
    void complete(RunRecord& record, const Question& question);
    void fail(RunRecord& record, const std::string& message);
    Policy& judge() const;

    RunEnvironment env_;
};

struct ReplayVerdict {
    bool ok = false;
    bool structural_only = false;  // non-deterministic backend: invariants checked, not bytes
    std::string first_divergence;  // JSON pointer plus both values, empty when ok
    RunRecord replayed;
};

/// Re-executes a run with its stored config and seed into a null sink and
/// compares transcripts byte-for-byte. Human decisions are fed back from the
/// original record. For non-deterministic policies only the structural
/// invariants are verified.
ReplayVerdict replay(const RunRecord& original, const Question& question, RunEnvironment env);

/// First differing location between two JSON values, empty when equal.
std::string json_first_divergence(const Json& a, const Json& b, const std::string& path = "");

}  // namespace tts
