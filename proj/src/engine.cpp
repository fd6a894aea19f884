// SPDX-License-Identifier: Apache-2.0
#include "tts/engine.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <algorithm>

namespace tts {

namespace {

constexpr auto u64 = [](auto v) { return static_cast<std::uint64_t>(v); };

[[noreturn]] void corrupt(const std::string& msg) { throw Error(ErrorCode::corrupt_log, msg); }

TurnRecord& turn_at(RunRecord& record, int turn_index)
{
    if (turn_index < 1 || turn_index > static_cast<int>(record.turns.size()))
        corrupt("event refers to missing turn " + std::to_string(turn_index));
    return record.turns[static_cast<std::size_t>(turn_index - 1)];
}

bool contains_id(const TurnRecord& turn, std::string_view id)
{
    return std::any_of(turn.responses.begin(), turn.responses.end(), [&](const Response& r) { return r.id == id; });
}

const Response& response_in(const TurnRecord& turn, std::string_view id)
{
    for (const auto& r : turn.responses)
        if (r.id == id)
            return r;
    throw Error(ErrorCode::invalid_state, "response " + std::string(id) + " not in turn");
}

}  // namespace

void apply_event(RunRecord& record, std::string_view type, const Json& payload)
{
    try {
        if (type == event::run_created) {
            if (!record.run_id.empty())
                corrupt("run_created on an existing record");
            record = RunRecord{};
            record.run_id = payload.at("run_id").get<std::string>();
            record.question_id = payload.at("question").at("id").get<std::string>();
            record.config = payload.at("config").get<ScalingConfig>();
            record.status = RunStatus::running;
            return;
        }
        if (record.run_id.empty())
            corrupt("event " + std::string(type) + " before run_created");
        if (record.status == RunStatus::complete || record.status == RunStatus::failed)
            corrupt("event " + std::string(type) + " after the run ended");

        if (type == event::responses_generated) {
            TurnRecord turn;
            turn.turn_index = payload.at("turn_index").get<int>();
            if (turn.turn_index != static_cast<int>(record.turns.size()) + 1)
                corrupt("turn " + std::to_string(turn.turn_index) + " out of order");
            turn.prompt_used = payload.at("prompt_used").get<std::string>();
            turn.system_prompt = payload.value("system_prompt", "");
            turn.responses = payload.at("responses").get<std::vector<Response>>();
            for (const auto& r : turn.responses)
                record.total_tokens_generated += r.tokens_generated;
            record.turns.push_back(std::move(turn));
        } else if (type == event::aggregation_done) {
            auto& turn = turn_at(record, payload.at("turn_index").get<int>());
            auto outcome = payload.at("outcome").get<AggregationOutcome>();
            if (!contains_id(turn, outcome.selected_id))
                corrupt("aggregation selects a response outside its turn");
            turn.aggregation = std::move(outcome);
        } else if (type == event::session_opened) {
            turn_at(record, payload.at("turn_index").get<int>());
            record.status = RunStatus::awaiting_judge;
            record.open_session_id = payload.at("session_id").get<std::string>();
        } else if (type == event::decision_recorded) {
            auto& turn = turn_at(record, payload.at("turn_index").get<int>());
            auto decision = payload.at("decision").get<JudgeDecision>();
            if (!contains_id(turn, decision.positive_id) || !contains_id(turn, decision.negative_id) ||
                decision.positive_id == decision.negative_id)
                corrupt("decision ids invalid for turn " + std::to_string(turn.turn_index));
            turn.decision = std::move(decision);
            turn.aggregation = payload.at("outcome").get<AggregationOutcome>();
            record.status = RunStatus::running;
            record.open_session_id.reset();
        } else if (type == event::run_completed) {
            record.final_response_id = payload.at("final_response_id").get<std::string>();
            if (payload.contains("final_score"))
                record.final_score = payload.at("final_score").get<double>();
            record.status = RunStatus::complete;
            record.open_session_id.reset();
        } else if (type == event::run_failed) {
            record.error = payload.at("error").get<std::string>();
            record.status = RunStatus::failed;
            record.open_session_id.reset();
        } else {
            corrupt("unknown event type " + std::string(type));
        }
    } catch (const nlohmann::json::exception& e) {
        corrupt("malformed " + std::string(type) + " payload: " + e.what());
    }
}

std::string compose_refinement_prompt(const Question& question, const Response& positive, const Response* negative,
                                      const RefinementProfile& profile, const PromptRegistry& prompts,
                                      bool inject_markers, const std::vector<const Response*>& history)
{
    std::string out = render_template(prompts.get(profile.question_key),
                                      {{"problem_statement", question.prompt}, {"previous_output1", positive.text}});
    if (inject_markers) {
        out += kPositiveMarker;
        out += '\n';
    }
    if (negative) {
        out += render_template(prompts.get(profile.negative_section_key), {{"previous_output2", negative->text}});
        if (inject_markers) {
            out += kNegativeMarker;
            out += '\n';
        }
    }
    if (profile.history && !history.empty()) {
        std::string block;
        for (const auto* r : history)
            block += "Attempt " + std::to_string(r->turn_index) + ":\n" + r->text + "\n";
        out += render_template(prompts.get(profile.history_section_key), {{"history", block}});
    }
    return out;
}

// ---------------------------------------------------------------------------

Engine::Engine(RunEnvironment env) : env_(std::move(env))
{
    if (!env_.policy)
        throw Error(ErrorCode::invalid_config, "engine needs a policy");
    if (env_.regenerate_attempts < 0)
        throw Error(ErrorCode::invalid_config, "regenerate_attempts must be non-negative");
}

Policy& Engine::judge() const { return env_.judge_policy ? *env_.judge_policy : *env_.policy; }

Json Engine::creation_payload(const std::string& run_id, const Question& question, const ScalingConfig& config) const
{
    Json p{{"run_id", run_id},
           {"question", question},
           {"config", config},
           {"policy", env_.policy->describe()},
           {"judge", judge().describe()}};
    if (env_.task_scorer)
        p["task_scorer"] = env_.task_scorer->describe();
    if (env_.ground_truth)
        p["ground_truth"] = env_.ground_truth->describe();
    p["options"] = Json{{"regenerate_attempts", env_.regenerate_attempts},
                        {"refinement_profile", env_.refinement_profile},
                        {"human_timeout_s", env_.human_timeout_s}};
    return p;
}

RunRecord Engine::start(const std::string& run_id, const Question& question, const ScalingConfig& config)
{
    std::vector<std::string> violations = validate_config(config);
    for (auto& v : validate_question(question))
        violations.push_back(std::move(v));
    if (!violations.empty()) {
        std::string msg;
        for (const auto& v : violations)
            msg += (msg.empty() ? "" : "; ") + v;
        throw Error(ErrorCode::invalid_config, msg);
    }
    if (config.strategy == Strategy::batch_bon_scoring && !env_.task_scorer)
        throw Error(ErrorCode::scorer_missing, "batch_bon_scoring needs a task scorer");
    if (config.strategy == Strategy::threeD_human_judge && !env_.sessions)
        throw Error(ErrorCode::invalid_config, "human judging needs a session manager");
    env_.prompts.domain(question.domain);
    if (config.turns > 1)
        env_.prompts.refinement(env_.refinement_profile);

    RunRecord record;
    emit(record, event::run_created, creation_payload(run_id, question, config));
    return record;
}

RunRecord Engine::run(const std::string& run_id, const Question& question, const ScalingConfig& config)
{
    auto record = start(run_id, question, config);
    advance(record, question);
    return record;
}

void Engine::emit(RunRecord& record, std::string_view type, const Json& payload)
{
    RunRecord next = record;
    apply_event(next, type, payload);
    if (env_.sink)
        env_.sink->append(next.run_id, type, payload);
    record = std::move(next);
}

bool Engine::turn_closed(const RunRecord& record, const TurnRecord& turn) const
{
    const auto s = record.config.strategy;
    if (s == Strategy::context || s == Strategy::turn_reflection)
        return true;
    if (is_batch(s))
        return turn.aggregation.has_value();
    return turn.decision.has_value();
}

void Engine::advance(RunRecord& record, const Question& question)
{
    while (record.status == RunStatus::running) {
        if (record.turns.empty() || (turn_closed(record, record.turns.back()) &&
                                     static_cast<int>(record.turns.size()) < record.config.turns)) {
            generate_turn(record, question);
        } else if (!turn_closed(record, record.turns.back())) {
            close_turn(record, question);
        } else {
            complete(record, question);
        }
    }
}

void Engine::generate_turn(RunRecord& record, const Question& question)
{
    const auto& cfg = record.config;
    const int turn_index = static_cast<int>(record.turns.size()) + 1;
    const auto& domain = env_.prompts.domain(question.domain);
    const auto& extraction = env_.prompts.extraction(domain.extraction);

    PolicyRequest req;
    req.max_tokens = cfg.max_tokens;
    req.temperature = cfg.temperature;
    req.seed = derive_seed(cfg.seed, {u64(turn_index), u64(SeedPurpose::generation)});
    req.system_prompt = env_.prompts.solve_system(question.domain);

    if (turn_index == 1) {
        req.prompt = question.prompt;
    } else {
        const auto& profile = env_.prompts.refinement(env_.refinement_profile);
        const auto& refine_system = env_.prompts.get(profile.system_key);
        req.system_prompt = req.system_prompt.empty() ? refine_system : req.system_prompt + "\n\n" + refine_system;

        const auto& prev = record.turns.back();
        const Response* positive = nullptr;
        const Response* negative = nullptr;
        if (cfg.strategy == Strategy::turn_reflection) {
            positive = &prev.responses.front();
        } else {
            positive = &response_in(prev, prev.decision->positive_id);
            negative = &response_in(prev, prev.decision->negative_id);
        }
        std::vector<const Response*> history;
        for (std::size_t t = 0; t + 1 < record.turns.size(); ++t) {
            const auto& turn = record.turns[t];
            history.push_back(turn.decision ? &response_in(turn, turn.decision->positive_id) : &turn.responses.front());
        }
        req.prompt = compose_refinement_prompt(question, *positive, negative, profile, env_.prompts,
                                               env_.policy->wants_markers(), history);
    }

    auto batch = env_.policy->generate_batch(req, cfg.batch_size);
    if (static_cast<int>(batch.size()) != cfg.batch_size) {
        fail(record, "policy returned " + std::to_string(batch.size()) + " results for a batch of " +
                         std::to_string(cfg.batch_size));
        return;
    }
    for (int round = 1; round <= env_.regenerate_attempts && has_partial_failure(batch); ++round) {
        for (int i = 0; i < cfg.batch_size; ++i) {
            auto& g = batch[static_cast<std::size_t>(i)];
            if (g.finish_reason != FinishReason::error)
                continue;
            PolicyRequest sub = req;
            sub.seed = derive_seed(req.seed, {u64(SeedPurpose::regenerate), u64(round), u64(i)});
            try {
                g = env_.policy->generate(sub);
            } catch (const Error& e) {
                g = Generation{};
                g.finish_reason = FinishReason::error;
                g.error = e.what();
            }
        }
    }

    Json responses = Json::array();
    bool any_ok = false;
    std::string last_error;
    for (int i = 0; i < cfg.batch_size; ++i) {
        auto& g = batch[static_cast<std::size_t>(i)];
        Response r;
        r.id = response_id(turn_index, i);
        r.question_id = question.id;
        r.turn_index = turn_index;
        r.batch_index = i;
        r.finish_reason = g.finish_reason;
        if (g.finish_reason == FinishReason::error) {
            r.error = g.error.value_or("generation failed");
            last_error = *r.error;
        } else {
            any_ok = true;
            r.text = std::move(g.text);
            r.tokens_generated = std::clamp<std::int64_t>(g.tokens_generated, 0, cfg.max_tokens);
            if (r.finish_reason == FinishReason::length)
                r.tokens_generated = cfg.max_tokens;
            r.extracted_answer = extract_answer(r.text, extraction);
        }
        responses.push_back(r);
    }
    if (!any_ok) {
        fail(record, "every generation in turn " + std::to_string(turn_index) + " failed: " + last_error);
        return;
    }
    emit(record, event::responses_generated,
         Json{{"turn_index", turn_index},
              {"prompt_used", req.prompt},
              {"system_prompt", req.system_prompt},
              {"responses", std::move(responses)}});
}

void Engine::close_turn(RunRecord& record, const Question& question)
{
    const auto& cfg = record.config;
    const auto& turn = record.turns.back();
    const int turn_index = turn.turn_index;
    const auto& selection = env_.prompts.selection(env_.prompts.domain(question.domain).selection);

    JudgeQueryOptions options;
    options.max_tokens = cfg.max_tokens;
    options.temperature = cfg.temperature;
    options.seed = derive_seed(cfg.seed, {u64(turn_index), u64(SeedPurpose::judge)});

    try {
        switch (cfg.strategy) {
        case Strategy::batch_vote:
        case Strategy::batch_bon_scoring:
        case Strategy::batch_bon_llm:
        case Strategy::batch_vote_then_bon: {
            AggregationOutcome outcome;
            if (cfg.strategy == Strategy::batch_vote)
                outcome = majority_vote(turn.responses);
            else if (cfg.strategy == Strategy::batch_bon_scoring)
                outcome = scoring_bon(question, turn.responses, *env_.task_scorer);
            else if (cfg.strategy == Strategy::batch_bon_llm)
                outcome = llm_bon(question, turn.responses, judge(), selection, env_.prompts, options);
            else
                outcome = vote_then_bon(question, turn.responses, judge(), selection, env_.prompts, options);
            emit(record, event::aggregation_done, Json{{"turn_index", turn_index}, {"outcome", outcome}});
            return;
        }
        case Strategy::threeD_llm_judge: {
            const auto negative_seed = derive_seed(cfg.seed, {u64(turn_index), u64(SeedPurpose::negative)});
            auto result = llm_judge(question, turn.responses, judge(), selection, env_.prompts, options, negative_seed);
            emit(record, event::decision_recorded,
                 Json{{"turn_index", turn_index}, {"decision", result.decision}, {"outcome", result.outcome}});
            return;
        }
        case Strategy::threeD_human_judge: {
            std::vector<SessionCandidate> candidates;
            for (const auto& r : turn.responses)
                candidates.push_back({r.id, r.text});
            auto session = env_.sessions->open_session(record.run_id, turn_index, question.prompt,
                                                       std::move(candidates), env_.human_timeout_s);
            emit(record, event::session_opened,
                 Json{{"turn_index", turn_index},
                      {"session_id", session.session_id},
                      {"timeout_s", session.timeout_s},
                      {"opened_at", to_rfc3339(session.opened_at)}});
            return;
        }
        default:
            throw Error(ErrorCode::invalid_state, "strategy has no aggregation step");
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::storage_io || e.code() == ErrorCode::duplicate_open)
            throw;
        fail(record, std::string(to_string(e.code())) + ": " + e.what());
    }
}

void Engine::complete(RunRecord& record, const Question& question)
{
    const auto& last = record.turns.back();
    std::string final_id;
    if (last.decision)
        final_id = last.decision->positive_id;
    else if (last.aggregation)
        final_id = last.aggregation->selected_id;
    else
        final_id = last.responses.front().id;
    const auto& final_response = response_in(last, final_id);
    if (final_response.finish_reason == FinishReason::error) {
        fail(record, "final response " + final_id + " failed to generate");
        return;
    }
    Json payload{{"final_response_id", final_id}};
    if (env_.ground_truth) {
        auto s = env_.ground_truth->score(question, final_response);
        payload["final_score"] = s.failure ? 0.0 : s.score;
    }
    emit(record, event::run_completed, payload);
}

void Engine::fail(RunRecord& record, const std::string& message)
{
    emit(record, event::run_failed, Json{{"error", message}});
}

void Engine::apply_decision(RunRecord& record, const Question& question, const JudgeDecision& decision)
{
    record_decision(record, decision);
    advance(record, question);
}

void Engine::resume_with_fallback(RunRecord& record, const Question& question)
{
    record_fallback(record, question);
    advance(record, question);
}

void Engine::record_decision(RunRecord& record, const JudgeDecision& decision)
{
    if (record.status != RunStatus::awaiting_judge || record.turns.empty() || record.turns.back().decision)
        throw Error(ErrorCode::invalid_state, "run " + record.run_id + " is not awaiting a decision");
    const auto& turn = record.turns.back();
    if (!contains_id(turn, decision.positive_id) || !contains_id(turn, decision.negative_id))
        throw Error(ErrorCode::index_out_of_range, "decision refers to responses outside the current turn");
    if (decision.positive_id == decision.negative_id)
        throw Error(ErrorCode::indices_equal, "positive and negative must differ");
    AggregationOutcome outcome;
    outcome.kind = decision.source == DecisionSource::human ? AggregationKind::human_pair : AggregationKind::judge_pair;
    outcome.selected_id = decision.positive_id;
    outcome.negative_id = decision.negative_id;
    emit(record, event::decision_recorded,
         Json{{"turn_index", turn.turn_index}, {"decision", decision}, {"outcome", outcome}});
}

void Engine::record_fallback(RunRecord& record, const Question& question)
{
    if (record.status != RunStatus::awaiting_judge || record.turns.empty() || record.turns.back().decision)
        throw Error(ErrorCode::invalid_state, "run " + record.run_id + " is not awaiting a decision");
    const auto& cfg = record.config;
    const auto& turn = record.turns.back();
    const auto& selection = env_.prompts.selection(env_.prompts.domain(question.domain).selection);
    JudgeQueryOptions options;
    options.max_tokens = cfg.max_tokens;
    options.temperature = cfg.temperature;
    options.seed = derive_seed(cfg.seed, {u64(turn.turn_index), u64(SeedPurpose::judge)});
    const auto negative_seed = derive_seed(cfg.seed, {u64(turn.turn_index), u64(SeedPurpose::negative)});
    auto result = llm_judge(question, turn.responses, judge(), selection, env_.prompts, options, negative_seed);
    result.decision.source = DecisionSource::fallback;
    emit(record, event::decision_recorded,
         Json{{"turn_index", turn.turn_index}, {"decision", result.decision}, {"outcome", result.outcome}});
}

// ---------------------------------------------------------------------------

std::string json_first_divergence(const Json& a, const Json& b, const std::string& path)
{
    if (a.type() != b.type())
        return (path.empty() ? "/" : path) + ": " + a.dump() + " != " + b.dump();
    if (a.is_object()) {
        for (auto it = a.begin(); it != a.end(); ++it) {
            if (!b.contains(it.key()))
                return path + "/" + it.key() + ": present != absent";
            auto d = json_first_divergence(it.value(), b.at(it.key()), path + "/" + it.key());
            if (!d.empty())
                return d;
        }
        for (auto it = b.begin(); it != b.end(); ++it)
            if (!a.contains(it.key()))
                return path + "/" + it.key() + ": absent != present";
        if (a.dump() != b.dump())
            return (path.empty() ? "/" : path) + ": key order differs";
        return {};
    }
    if (a.is_array()) {
        const auto n = std::min(a.size(), b.size());
        for (std::size_t i = 0; i < n; ++i) {
            auto d = json_first_divergence(a[i], b[i], path + "/" + std::to_string(i));
            if (!d.empty())
                return d;
        }
        if (a.size() != b.size())
            return path + ": length " + std::to_string(a.size()) + " != " + std::to_string(b.size());
        return {};
    }
    if (a != b)
        return (path.empty() ? "/" : path) + ": " + a.dump() + " != " + b.dump();
    return {};
}

ReplayVerdict replay(const RunRecord& original, const Question& question, RunEnvironment env)
{
    ReplayVerdict verdict;
    const auto s = original.config.strategy;
    const bool uses_judge = s == Strategy::batch_bon_llm || s == Strategy::batch_vote_then_bon || is_three_d(s);
    const Policy* judge = env.judge_policy ? env.judge_policy : env.policy;
    if (!env.policy->deterministic() || (uses_judge && !judge->deterministic())) {
        verdict.structural_only = true;
        auto violations = check_run_invariants(original);
        if (original.question_id != question.id)
            violations.push_back("question id mismatch");
        verdict.ok = violations.empty();
        if (!violations.empty())
            verdict.first_divergence = violations.front();
        verdict.replayed = original;
        return verdict;
    }

    SessionManager sessions;
    env.sink = nullptr;
    env.sessions = &sessions;
    Engine engine(env);
    RunRecord record;
    try {
        record = engine.start(original.run_id, question, original.config);
        engine.advance(record, question);
        while (record.status == RunStatus::awaiting_judge) {
            const auto turn_index = record.turns.back().turn_index;
            if (turn_index > static_cast<int>(original.turns.size()))
                break;
            const auto& recorded = original.turns[static_cast<std::size_t>(turn_index - 1)].decision;
            if (!recorded)
                break;  // the original is still parked here
            if (recorded->source == DecisionSource::fallback)
                engine.resume_with_fallback(record, question);
            else
                engine.apply_decision(record, question, *recorded);
        }
    } catch (const Error& e) {
        verdict.ok = false;
        verdict.first_divergence = std::string("replay raised ") + std::string(to_string(e.code())) + ": " + e.what();
        verdict.replayed = std::move(record);
        return verdict;
    }
    // A parked original has an open session id; the replay opens the same one.
    verdict.first_divergence = json_first_divergence(transcript_json(original), transcript_json(record));
    verdict.ok = verdict.first_divergence.empty();
    verdict.replayed = std::move(record);
    return verdict;
}

}  // namespace tts
