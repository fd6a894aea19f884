// SPDX-License-Identifier: Apache-2.0
//
// Domain types shared by every module, plus the token-budget model.
//
// A run is described by a ScalingConfig (C, B, T, strategy, seed). Its
// transcript is a RunRecord: T turns of B responses each, with the
// aggregation outcome or judge decision that closed every turn.
#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tts {

enum class DomainTag { math, physics, code, open_ended };

enum class FinishReason { stop, length, error };

enum class Strategy {
    context,
    batch_vote,
    batch_bon_scoring,
    batch_bon_llm,
    batch_vote_then_bon,
    turn_reflection,
    threeD_llm_judge,
    threeD_human_judge,
};

enum class RunStatus { running, awaiting_judge, complete, failed };

enum class AggregationKind { vote, bon_scoring, bon_llm, vote_then_bon, judge_pair, human_pair };

enum class DecisionSource { llm, human, fallback };

std::string_view to_string(DomainTag v);
std::string_view to_string(FinishReason v);
std::string_view to_string(Strategy v);
std::string_view to_string(RunStatus v);
std::string_view to_string(AggregationKind v);
std::string_view to_string(DecisionSource v);

std::optional<DomainTag> parse_domain(std::string_view s);
std::optional<Strategy> parse_strategy(std::string_view s);
std::optional<RunStatus> parse_status(std::string_view s);

bool is_batch(Strategy s);
bool is_three_d(Strategy s);

/// How an external scorer is invoked. `argv` may contain the `{input_file}`
/// placeholder; the command prints one number in [0,1].
struct CommandProfile {
    enum class Workdir { temporary, fixed };

    std::vector<std::string> argv;
    double time_limit_s = 60.0;
    Workdir workdir = Workdir::temporary;
    std::string fixed_dir;  // used when workdir == fixed

    bool operator==(const CommandProfile&) const = default;
};

struct Question {
    std::string id;
    std::string prompt;
    DomainTag domain = DomainTag::math;
    std::optional<std::string> gold_answer;
    std::optional<CommandProfile> scorer_binding;

    bool operator==(const Question&) const = default;
};

std::vector<std::string> validate_question(const Question& q);

struct Answer {
    std::string raw;
    std::string canonical;
    std::vector<std::string> normalization_trace;

    bool operator==(const Answer&) const = default;
};

struct Response {
    std::string id;
    std::string question_id;
    int turn_index = 1;
    int batch_index = 0;
    std::string text;
    std::optional<Answer> extracted_answer;
    std::int64_t tokens_generated = 0;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<std::string> error;

    bool operator==(const Response&) const = default;
};

std::string response_id(int turn_index, int batch_index);

struct ScalingConfig {
    std::int64_t max_tokens = 4096;  // C
    int batch_size = 1;              // B
    int turns = 1;                   // T
    Strategy strategy = Strategy::context;
    std::uint64_t seed = 0;
    double temperature = 0.1;

    bool operator==(const ScalingConfig&) const = default;
};

struct TallyEntry {
    std::string answer;
    int count = 0;

    bool operator==(const TallyEntry&) const = default;
};

struct AggregationOutcome {
    AggregationKind kind = AggregationKind::vote;
    std::string selected_id;
    std::optional<std::string> negative_id;
    // Vote tallies in first-occurrence order. Responses without an extracted
    // answer abstain; tallies plus abstentions always sum to B.
    std::optional<std::vector<TallyEntry>> tallies;
    int abstentions = 0;
    std::vector<double> scores;                // scoring-based BoN, one per candidate
    std::vector<std::string> scorer_failures;  // ids that scored 0 because the scorer failed
    bool fallback = false;                     // judge output unparseable, index 0 used
    std::int64_t judge_tokens = 0;
    int judge_queries = 0;
    std::optional<double> judge_latency_ms;

    bool operator==(const AggregationOutcome&) const = default;
};

struct JudgeDecision {
    std::string positive_id;
    std::string negative_id;
    DecisionSource source = DecisionSource::llm;
    std::optional<std::string> rationale;
    std::string decided_at;  // RFC-3339 UTC

    bool operator==(const JudgeDecision&) const = default;
};

struct TurnRecord {
    int turn_index = 1;
    std::string prompt_used;
    std::string system_prompt;
    std::vector<Response> responses;
    std::optional<AggregationOutcome> aggregation;
    std::optional<JudgeDecision> decision;

    bool operator==(const TurnRecord&) const = default;
};

struct RunRecord {
    std::string run_id;
    std::string question_id;
    ScalingConfig config;
    std::vector<TurnRecord> turns;
    std::optional<std::string> final_response_id;
    std::optional<double> final_score;
    std::int64_t total_tokens_generated = 0;
    RunStatus status = RunStatus::running;
    std::optional<std::string> open_session_id;
    std::optional<std::string> error;

    bool operator==(const RunRecord&) const = default;

    const Response* find_response(std::string_view id) const;
};

/// Theoretical maximum number of generated tokens: B * T * C.
/// Prompt tokens are not counted.
std::int64_t budget(const ScalingConfig& config);

/// Every violated ScalingConfig invariant, empty when valid.
std::vector<std::string> validate_config(const ScalingConfig& config);

/// Transcript invariants (budget law, B*T responses on completion, judge ids
/// inside their turn, final response in the last turn). Empty when clean.
std::vector<std::string> check_run_invariants(const RunRecord& record);

/// Current UTC time as RFC-3339 with millisecond precision.
std::string utc_now_rfc3339();
std::string to_rfc3339(std::chrono::system_clock::time_point t);

}  // namespace tts
