// SPDX-License-Identifier: Apache-2.0
#include "tts/json_io.hpp"
#include "tts/error.hpp"

namespace tts {

namespace {

template <typename T>
void put_opt(Json& j, const char* key, const std::optional<T>& v)
{
    if (v)
        j[key] = *v;
}

template <typename T>
void get_opt(const Json& j, const char* key, std::optional<T>& v)
{
    auto it = j.find(key);
    if (it != j.end() && !it->is_null())
        v = it->template get<T>();
    else
        v.reset();
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback)
{
    auto it = j.find(key);
    return it != j.end() && !it->is_null() ? it->template get<T>() : fallback;
}

template <typename E, typename Parse>
E get_enum(const Json& j, const char* key, Parse parse)
{
    const auto text = j.at(key).get<std::string>();
    auto v = parse(text);
    if (!v)
        throw Error(ErrorCode::invalid_config, std::string("unknown ") + key + " '" + text + "'");
    return *v;
}

std::optional<FinishReason> parse_finish(std::string_view s)
{
    for (auto v : {FinishReason::stop, FinishReason::length, FinishReason::error})
        if (to_string(v) == s)
            return v;
    return std::nullopt;
}

std::optional<AggregationKind> parse_kind(std::string_view s)
{
    for (auto v : {AggregationKind::vote, AggregationKind::bon_scoring, AggregationKind::bon_llm,
                   AggregationKind::vote_then_bon, AggregationKind::judge_pair, AggregationKind::human_pair})
        if (to_string(v) == s)
            return v;
    return std::nullopt;
}

std::optional<DecisionSource> parse_source(std::string_view s)
{
    for (auto v : {DecisionSource::llm, DecisionSource::human, DecisionSource::fallback})
        if (to_string(v) == s)
            return v;
    return std::nullopt;
}

}  // namespace

void to_json(Json& j, const CommandProfile& v)
{
    j = Json{{"argv", v.argv}, {"time_limit_s", v.time_limit_s},
             {"workdir", v.workdir == CommandProfile::Workdir::fixed ? "fixed" : "temporary"}};
    if (v.workdir == CommandProfile::Workdir::fixed)
        j["fixed_dir"] = v.fixed_dir;
}

void from_json(const Json& j, CommandProfile& v)
{
    v.argv = j.at("argv").get<std::vector<std::string>>();
    v.time_limit_s = get_or(j, "time_limit_s", 60.0);
    v.workdir = get_or<std::string>(j, "workdir", "temporary") == "fixed" ? CommandProfile::Workdir::fixed
                                                                         : CommandProfile::Workdir::temporary;
    v.fixed_dir = get_or<std::string>(j, "fixed_dir", "");
}

void to_json(Json& j, const Question& v)
{
    j = Json{{"id", v.id}, {"prompt", v.prompt}, {"domain_tag", to_string(v.domain)}};
    put_opt(j, "gold_answer", v.gold_answer);
    put_opt(j, "scorer_binding", v.scorer_binding);
}

void from_json(const Json& j, Question& v)
{
    v.id = j.at("id").get<std::string>();
    v.prompt = j.at("prompt").get<std::string>();
    v.domain = j.contains("domain_tag") ? get_enum<DomainTag>(j, "domain_tag", parse_domain) : DomainTag::math;
    get_opt(j, "gold_answer", v.gold_answer);
    get_opt(j, "scorer_binding", v.scorer_binding);
}

void to_json(Json& j, const Answer& v)
{
    j = Json{{"raw", v.raw}, {"canonical", v.canonical}, {"normalization_trace", v.normalization_trace}};
}

void from_json(const Json& j, Answer& v)
{
    v.raw = j.at("raw").get<std::string>();
    v.canonical = j.at("canonical").get<std::string>();
    v.normalization_trace = get_or(j, "normalization_trace", std::vector<std::string>{});
}

void to_json(Json& j, const Response& v)
{
    j = Json{{"id", v.id},
             {"question_id", v.question_id},
             {"turn_index", v.turn_index},
             {"batch_index", v.batch_index},
             {"text", v.text}};
    put_opt(j, "extracted_answer", v.extracted_answer);
    j["tokens_generated"] = v.tokens_generated;
    j["finish_reason"] = to_string(v.finish_reason);
    put_opt(j, "error", v.error);
}

void from_json(const Json& j, Response& v)
{
    v.id = j.at("id").get<std::string>();
    v.question_id = j.at("question_id").get<std::string>();
    v.turn_index = j.at("turn_index").get<int>();
    v.batch_index = j.at("batch_index").get<int>();
    v.text = j.at("text").get<std::string>();
    get_opt(j, "extracted_answer", v.extracted_answer);
    v.tokens_generated = j.at("tokens_generated").get<std::int64_t>();
    v.finish_reason = get_enum<FinishReason>(j, "finish_reason", parse_finish);
    get_opt(j, "error", v.error);
}

void to_json(Json& j, const ScalingConfig& v)
{
    j = Json{{"max_tokens", v.max_tokens}, {"batch_size", v.batch_size},     {"turns", v.turns},
             {"strategy", to_string(v.strategy)}, {"seed", v.seed}, {"temperature", v.temperature}};
}

void from_json(const Json& j, ScalingConfig& v)
{
    v.max_tokens = get_or<std::int64_t>(j, "max_tokens", 4096);
    v.batch_size = get_or(j, "batch_size", 1);
    v.turns = get_or(j, "turns", 1);
    v.strategy = get_enum<Strategy>(j, "strategy", parse_strategy);
    v.seed = get_or<std::uint64_t>(j, "seed", 0);
    v.temperature = get_or(j, "temperature", 0.1);
}

void to_json(Json& j, const AggregationOutcome& v)
{
    j = Json{{"kind", to_string(v.kind)}, {"selected_id", v.selected_id}};
    put_opt(j, "negative_id", v.negative_id);
    if (v.tallies) {
        Json t = Json::object();
        for (const auto& e : *v.tallies)
            t[e.answer] = e.count;
        j["tallies"] = std::move(t);
        j["abstentions"] = v.abstentions;
    }
    if (!v.scores.empty())
        j["scores"] = v.scores;
    if (!v.scorer_failures.empty())
        j["scorer_failures"] = v.scorer_failures;
    if (v.fallback)
        j["fallback"] = true;
    if (v.judge_queries > 0) {
        j["judge_queries"] = v.judge_queries;
        j["judge_tokens"] = v.judge_tokens;
    }
    put_opt(j, "judge_latency_ms", v.judge_latency_ms);
}

void from_json(const Json& j, AggregationOutcome& v)
{
    v.kind = get_enum<AggregationKind>(j, "kind", parse_kind);
    v.selected_id = j.at("selected_id").get<std::string>();
    get_opt(j, "negative_id", v.negative_id);
    v.tallies.reset();
    if (auto it = j.find("tallies"); it != j.end()) {
        std::vector<TallyEntry> tallies;
        for (const auto& [answer, count] : it->items())
            tallies.push_back({answer, count.get<int>()});
        v.tallies = std::move(tallies);
    }
    v.abstentions = get_or(j, "abstentions", 0);
    v.scores = get_or(j, "scores", std::vector<double>{});
    v.scorer_failures = get_or(j, "scorer_failures", std::vector<std::string>{});
    v.fallback = get_or(j, "fallback", false);
    v.judge_queries = get_or(j, "judge_queries", 0);
    v.judge_tokens = get_or<std::int64_t>(j, "judge_tokens", 0);
    get_opt(j, "judge_latency_ms", v.judge_latency_ms);
}

void to_json(Json& j, const JudgeDecision& v)
{
    j = Json{{"positive_id", v.positive_id}, {"negative_id", v.negative_id}, {"source", to_string(v.source)}};
    put_opt(j, "rationale", v.rationale);
    j["decided_at"] = v.decided_at;
}

void from_json(const Json& j, JudgeDecision& v)
{
    v.positive_id = j.at("positive_id").get<std::string>();
    v.negative_id = j.at("negative_id").get<std::string>();
    v.source = get_enum<DecisionSource>(j, "source", parse_source);
    get_opt(j, "rationale", v.rationale);
    v.decided_at = get_or<std::string>(j, "decided_at", "");
}

void to_json(Json& j, const TurnRecord& v)
{
    j = Json{{"turn_index", v.turn_index}, {"system_prompt", v.system_prompt}, {"prompt_used", v.prompt_used},
             {"responses", v.responses}};
    put_opt(j, "aggregation", v.aggregation);
    put_opt(j, "decision", v.decision);
}

void from_json(const Json& j, TurnRecord& v)
{
    v.turn_index = j.at("turn_index").get<int>();
    v.system_prompt = get_or<std::string>(j, "system_prompt", "");
    v.prompt_used = j.at("prompt_used").get<std::string>();
    v.responses = j.at("responses").get<std::vector<Response>>();
    get_opt(j, "aggregation", v.aggregation);
    get_opt(j, "decision", v.decision);
}

void to_json(Json& j, const RunRecord& v)
{
    j = Json{{"run_id", v.run_id}, {"question_id", v.question_id}, {"config", v.config}, {"turns", v.turns}};
    put_opt(j, "final_response_id", v.final_response_id);
    put_opt(j, "final_score", v.final_score);
    j["total_tokens_generated"] = v.total_tokens_generated;
    j["status"] = to_string(v.status);
    put_opt(j, "open_session_id", v.open_session_id);
    put_opt(j, "error", v.error);
}

void from_json(const Json& j, RunRecord& v)
{
    v.run_id = j.at("run_id").get<std::string>();
    v.question_id = j.at("question_id").get<std::string>();
    v.config = j.at("config").get<ScalingConfig>();
    v.turns = j.at("turns").get<std::vector<TurnRecord>>();
    get_opt(j, "final_response_id", v.final_response_id);
    get_opt(j, "final_score", v.final_score);
    v.total_tokens_generated = j.at("total_tokens_generated").get<std::int64_t>();
    v.status = get_enum<RunStatus>(j, "status", parse_status);
    get_opt(j, "open_session_id", v.open_session_id);
    get_opt(j, "error", v.error);
}

Json transcript_json(const RunRecord& record)
{
    RunRecord copy = record;
    for (auto& turn : copy.turns) {
        if (turn.decision)
            turn.decision->decided_at.clear();
        if (turn.aggregation)
            turn.aggregation->judge_latency_ms.reset();
    }
    Json j = copy;
    for (auto& turn : j["turns"])
        if (turn.contains("decision"))
            turn["decision"].erase("decided_at");
    return j;
}

}  // namespace tts
