// SPDX-License-Identifier: Apache-2.0
#include "tts/core.hpp"
#include "tts/error.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <set>
#include <utility>

namespace tts {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s)
{
    for (const auto& [value, name] : table)
        if (name == s)
            return value;
    return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E v)
{
    for (const auto& [value, name] : table)
        if (value == v)
            return name;
    return "unknown";
}

constexpr std::array<std::pair<DomainTag, std::string_view>, 4> kDomains{{
    {DomainTag::math, "math"},
    {DomainTag::physics, "physics"},
    {DomainTag::code, "code"},
    {DomainTag::open_ended, "open_ended"},
}};

constexpr std::array<std::pair<FinishReason, std::string_view>, 3> kFinish{{
    {FinishReason::stop, "stop"},
    {FinishReason::length, "length"},
    {FinishReason::error, "error"},
}};

constexpr std::array<std::pair<Strategy, std::string_view>, 8> kStrategies{{
    {Strategy::context, "context"},
    {Strategy::batch_vote, "batch_vote"},
    {Strategy::batch_bon_scoring, "batch_bon_scoring"},
    {Strategy::batch_bon_llm, "batch_bon_llm"},
    {Strategy::batch_vote_then_bon, "batch_vote_then_bon"},
    {Strategy::turn_reflection, "turn_reflection"},
    {Strategy::threeD_llm_judge, "threeD_llm_judge"},
    {Strategy::threeD_human_judge, "threeD_human_judge"},
}};

constexpr std::array<std::pair<RunStatus, std::string_view>, 4> kStatus{{
    {RunStatus::running, "running"},
    {RunStatus::awaiting_judge, "awaiting_judge"},
    {RunStatus::complete, "complete"},
    {RunStatus::failed, "failed"},
}};

constexpr std::array<std::pair<AggregationKind, std::string_view>, 6> kKinds{{
    {AggregationKind::vote, "vote"},
    {AggregationKind::bon_scoring, "bon_scoring"},
    {AggregationKind::bon_llm, "bon_llm"},
    {AggregationKind::vote_then_bon, "vote_then_bon"},
    {AggregationKind::judge_pair, "judge_pair"},
    {AggregationKind::human_pair, "human_pair"},
}};

constexpr std::array<std::pair<DecisionSource, std::string_view>, 3> kSources{{
    {DecisionSource::llm, "llm"},
    {DecisionSource::human, "human"},
    {DecisionSource::fallback, "fallback"},
}};

constexpr std::array<std::pair<ErrorCode, std::string_view>, 18> kErrors{{
    {ErrorCode::invalid_config, "invalid_config"},
    {ErrorCode::invalid_spec, "invalid_spec"},
    {ErrorCode::provider_unreachable, "provider_unreachable"},
    {ErrorCode::provider_rejected, "provider_rejected"},
    {ErrorCode::no_extractable_answers, "no_extractable_answers"},
    {ErrorCode::scorer_missing, "scorer_missing"},
    {ErrorCode::template_missing, "template_missing"},
    {ErrorCode::llm_unavailable, "llm_unavailable"},
    {ErrorCode::duplicate_open, "duplicate_open"},
    {ErrorCode::session_not_pending, "session_not_pending"},
    {ErrorCode::index_out_of_range, "index_out_of_range"},
    {ErrorCode::indices_equal, "indices_equal"},
    {ErrorCode::not_found, "not_found"},
    {ErrorCode::corrupt_log, "corrupt_log"},
    {ErrorCode::storage_io, "storage_io"},
    {ErrorCode::instance_too_large, "instance_too_large"},
    {ErrorCode::nondeterministic_backend, "nondeterministic_backend"},
    {ErrorCode::invalid_state, "invalid_state"},
}};

}  // namespace

std::string_view to_string(ErrorCode code) { return name_of(kErrors, code); }
std::string_view to_string(DomainTag v) { return name_of(kDomains, v); }
std::string_view to_string(FinishReason v) { return name_of(kFinish, v); }
std::string_view to_string(Strategy v) { return name_of(kStrategies, v); }
std::string_view to_string(RunStatus v) { return name_of(kStatus, v); }
std::string_view to_string(AggregationKind v) { return name_of(kKinds, v); }
std::string_view to_string(DecisionSource v) { return name_of(kSources, v); }

std::optional<DomainTag> parse_domain(std::string_view s) { return lookup(kDomains, s); }
std::optional<Strategy> parse_strategy(std::string_view s) { return lookup(kStrategies, s); }
std::optional<RunStatus> parse_status(std::string_view s) { return lookup(kStatus, s); }

bool is_batch(Strategy s)
{
    return s == Strategy::batch_vote || s == Strategy::batch_bon_scoring || s == Strategy::batch_bon_llm ||
           s == Strategy::batch_vote_then_bon;
}

bool is_three_d(Strategy s)
{
    return s == Strategy::threeD_llm_judge || s == Strategy::threeD_human_judge;
}

std::vector<std::string> validate_question(const Question& q)
{
    std::vector<std::string> out;
    if (q.id.empty())
        out.emplace_back("question id is empty");
    if (q.prompt.empty())
        out.emplace_back("question prompt is empty");
    if (q.domain == DomainTag::code && q.gold_answer)
        out.emplace_back("code questions carry no gold answer (use a scorer binding)");
    if (q.scorer_binding && q.scorer_binding->argv.empty())
        out.emplace_back("scorer binding has an empty argv");
    return out;
}

std::string response_id(int turn_index, int batch_index)
{
    return "t" + std::to_string(turn_index) + "-b" + std::to_string(batch_index);
}

const Response* RunRecord::find_response(std::string_view id) const
{
    for (const auto& turn : turns)
        for (const auto& r : turn.responses)
            if (r.id == id)
                return &r;
    return nullptr;
}

std::int64_t budget(const ScalingConfig& config)
{
    return static_cast<std::int64_t>(config.batch_size) * config.turns * config.max_tokens;
}

std::vector<std::string> validate_config(const ScalingConfig& config)
{
    std::vector<std::string> out;
    if (config.max_tokens < 1)
        out.emplace_back("C must be >= 1");
    if (config.batch_size < 1)
        out.emplace_back("B must be >= 1");
    if (config.turns < 1)
        out.emplace_back("T must be >= 1");
    if (!(config.temperature >= 0.0))
        out.emplace_back("temperature must be >= 0");
    const auto s = config.strategy;
    if (s == Strategy::context && (config.batch_size != 1 || config.turns != 1))
        out.emplace_back("context scaling requires B = 1 and T = 1");
    if (is_batch(s) && config.turns != 1)
        out.emplace_back("batch strategies are single-turn");
    if (s == Strategy::turn_reflection && config.batch_size != 1)
        out.emplace_back("turn reflection requires B = 1");
    if (is_three_d(s) && config.batch_size < 2)
        out.emplace_back("judge requires B ≥ 2");
    return out;
}

std::vector<std::string> check_run_invariants(const RunRecord& record)
{
    std::vector<std::string> out;
    const auto& cfg = record.config;
    std::int64_t sum = 0;
    std::size_t responses = 0;
    for (const auto& turn : record.turns) {
        std::set<int> indices;
        for (const auto& r : turn.responses) {
            sum += r.tokens_generated;
            ++responses;
            indices.insert(r.batch_index);
            if (r.tokens_generated < 0 || r.tokens_generated > cfg.max_tokens)
                out.push_back("response " + r.id + " exceeds C");
            if (r.finish_reason == FinishReason::length && r.tokens_generated != cfg.max_tokens)
                out.push_back("response " + r.id + " finished by length with tokens != C");
            if (r.turn_index != turn.turn_index)
                out.push_back("response " + r.id + " has a mismatched turn index");
        }
        if (turn.responses.size() != static_cast<std::size_t>(cfg.batch_size) ||
            indices.size() != turn.responses.size() ||
            (!indices.empty() && (*indices.begin() != 0 || *indices.rbegin() != cfg.batch_size - 1)))
            out.push_back("turn " + std::to_string(turn.turn_index) + " does not hold B distinct batch indices");

        auto in_turn = [&turn](const std::string& id) {
            for (const auto& r : turn.responses)
                if (r.id == id)
                    return true;
            return false;
        };
        if (turn.decision) {
            if (turn.decision->positive_id == turn.decision->negative_id)
                out.push_back("turn " + std::to_string(turn.turn_index) + " decision has positive == negative");
            if (!in_turn(turn.decision->positive_id) || !in_turn(turn.decision->negative_id))
                out.push_back("turn " + std::to_string(turn.turn_index) + " decision refers outside its turn");
        }
        if (turn.aggregation) {
            const auto& agg = *turn.aggregation;
            if (!in_turn(agg.selected_id))
                out.push_back("turn " + std::to_string(turn.turn_index) + " aggregation selects outside its turn");
            if (agg.negative_id && *agg.negative_id == agg.selected_id)
                out.push_back("turn " + std::to_string(turn.turn_index) + " aggregation negative == selected");
            if (agg.kind == AggregationKind::vote) {
                if (!agg.tallies) {
                    out.push_back("vote outcome without tallies");
                } else {
                    int total = agg.abstentions;
                    for (const auto& t : *agg.tallies)
                        total += t.count;
                    if (total != cfg.batch_size)
                        out.push_back("vote tallies plus abstentions != B");
                }
            }
        }
    }
    if (sum != record.total_tokens_generated)
        out.emplace_back("total_tokens_generated differs from the sum over responses");
    if (record.total_tokens_generated > budget(cfg))
        out.emplace_back("total_tokens_generated exceeds budget");
    if (record.status == RunStatus::complete) {
        if (responses != static_cast<std::size_t>(cfg.batch_size) * cfg.turns)
            out.emplace_back("completed run does not hold B*T responses");
        if (!record.final_response_id) {
            out.emplace_back("completed run without a final response");
        } else if (record.turns.empty()) {
            out.emplace_back("completed run without turns");
        } else {
            bool found = false;
            for (const auto& r : record.turns.back().responses)
                found = found || r.id == *record.final_response_id;
            if (!found)
                out.emplace_back("final response is not in the last turn");
        }
    }
    return out;
}

std::string utc_now_rfc3339() { return to_rfc3339(std::chrono::system_clock::now()); }

std::string to_rfc3339(std::chrono::system_clock::time_point now)
{
    using namespace std::chrono;
    const auto secs = time_point_cast<seconds>(now);
    const auto ms = duration_cast<milliseconds>(now - secs).count();
    const std::time_t t = system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

}  // namespace tts
