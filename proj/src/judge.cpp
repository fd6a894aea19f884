// SPDX-License-Identifier: Apache-2.0
#include "tts/judge.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <algorithm>

namespace tts {

JudgeResult llm_judge(const Question& question, std::span<const Response> candidates, Policy& judge,
                      const SelectionProfile& profile, const PromptRegistry& prompts,
                      const JudgeQueryOptions& options, std::uint64_t negative_seed)
{
    if (candidates.size() < 2)
        throw Error(ErrorCode::invalid_state, "judge requires at least two candidates");
    auto outcome = llm_bon(question, candidates, judge, profile, prompts, options);
    std::vector<const Response*> rest;
    for (const auto& r : candidates)
        if (r.id != outcome.selected_id)
            rest.push_back(&r);
    const auto pick = uniform_index(negative_seed, rest.size());
    outcome.kind = AggregationKind::judge_pair;
    outcome.negative_id = rest[pick]->id;

    JudgeResult result;
    result.decision.positive_id = outcome.selected_id;
    result.decision.negative_id = *outcome.negative_id;
    result.decision.source = outcome.fallback ? DecisionSource::fallback : DecisionSource::llm;
    result.decision.decided_at = utc_now_rfc3339();
    result.outcome = std::move(outcome);
    return result;
}

std::string_view to_string(SessionState s)
{
    switch (s) {
    case SessionState::pending: return "pending";
    case SessionState::decided: return "decided";
    case SessionState::expired: return "expired";
    }
    return "unknown";
}

Json session_json(const JudgeSession& s)
{
    Json candidates = Json::array();
    for (std::size_t i = 0; i < s.candidates.size(); ++i)
        candidates.push_back(
            Json{{"index", i}, {"response_id", s.candidates[i].response_id}, {"text", s.candidates[i].text}});
    Json j{{"session_id", s.session_id},
           {"run_id", s.run_id},
           {"turn_index", s.turn_index},
           {"state", to_string(s.state)},
           {"question", s.question},
           {"candidates", std::move(candidates)},
           {"timeout_s", s.timeout_s},
           {"opened_at", to_rfc3339(s.opened_at)},
           {"expires_at", to_rfc3339(s.deadline())}};
    if (s.decision)
        j["decision"] = *s.decision;
    return j;
}

std::string session_id_for(std::string_view run_id, int turn_index)
{
    return std::string(run_id) + ".t" + std::to_string(turn_index);
}

void SessionManager::set_listener(Listener listener)
{
    std::lock_guard lock(listener_mu_);
    listener_ = std::move(listener);
}

void SessionManager::notify(const JudgeSession& s) const
{
    Listener l;
    {
        std::lock_guard lock(listener_mu_);
        l = listener_;
    }
    if (l)
        l(s);
}

JudgeSession SessionManager::open_session(const std::string& run_id, int turn_index, std::string question,
                                          std::vector<SessionCandidate> candidates, std::int64_t timeout_s,
                                          Clock::time_point now)
{
    if (candidates.size() < 2)
        throw Error(ErrorCode::invalid_state, "a judge session needs at least two candidates");
    auto entry = std::make_shared<Entry>();
    auto& s = entry->session;
    s.session_id = session_id_for(run_id, turn_index);
    s.run_id = run_id;
    s.turn_index = turn_index;
    s.question = std::move(question);
    s.candidates = std::move(candidates);
    s.timeout_s = timeout_s;
    s.opened_at = std::chrono::time_point_cast<std::chrono::milliseconds>(now);

    std::unique_lock lock(map_mu_);
    if (sessions_.count(s.session_id))
        throw Error(ErrorCode::duplicate_open, "session " + s.session_id + " already open");
    entry->order = next_order_++;
    sessions_.emplace(s.session_id, entry);
    return s;
}

JudgeDecision SessionManager::submit_decision(const std::string& session_id, int positive_index, int negative_index,
                                              Clock::time_point now)
{
    std::shared_ptr<Entry> entry;
    {
        std::shared_lock lock(map_mu_);
        auto it = sessions_.find(session_id);
        if (it == sessions_.end())
            throw Error(ErrorCode::not_found, "unknown session " + session_id);
        entry = it->second;
    }
    std::optional<JudgeSession> expired;
    JudgeDecision decision;
    {
        std::lock_guard lock(entry->mu);
        auto& s = entry->session;
        if (s.state == SessionState::pending && now > s.deadline()) {
            s.state = SessionState::expired;
            expired = s;
        } else {
            if (s.state != SessionState::pending)
                throw Error(ErrorCode::session_not_pending,
                            "session " + session_id + " is " + std::string(to_string(s.state)));
            const int n = static_cast<int>(s.candidates.size());
            if (positive_index < 0 || positive_index >= n || negative_index < 0 || negative_index >= n)
                throw Error(ErrorCode::index_out_of_range, "indices must lie in [0, " + std::to_string(n - 1) + "]");
            if (positive_index == negative_index)
                throw Error(ErrorCode::indices_equal, "positive and negative must differ");
            decision.positive_id = s.candidates[static_cast<std::size_t>(positive_index)].response_id;
            decision.negative_id = s.candidates[static_cast<std::size_t>(negative_index)].response_id;
            decision.source = DecisionSource::human;
            decision.decided_at = to_rfc3339(now);
            s.decision = decision;
            s.state = SessionState::decided;
        }
    }
    if (expired) {
        notify(*expired);
        throw Error(ErrorCode::session_not_pending, "session " + session_id + " expired");
    }
    JudgeSession snapshot;
    {
        std::lock_guard lock(entry->mu);
        snapshot = entry->session;
    }
    notify(snapshot);
    return decision;
}

std::vector<std::string> SessionManager::expire_sessions(Clock::time_point now)
{
    std::vector<std::shared_ptr<Entry>> entries;
    {
        std::shared_lock lock(map_mu_);
        for (const auto& [id, e] : sessions_)
            entries.push_back(e);
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a->order < b->order; });
    std::vector<std::string> ids;
    std::vector<JudgeSession> expired;
    for (auto& e : entries) {
        std::lock_guard lock(e->mu);
        if (e->session.state == SessionState::pending && now > e->session.deadline()) {
            e->session.state = SessionState::expired;
            ids.push_back(e->session.session_id);
            expired.push_back(e->session);
        }
    }
    for (const auto& s : expired)
        notify(s);
    return ids;
}

std::optional<JudgeSession> SessionManager::get(const std::string& session_id) const
{
    std::shared_ptr<Entry> entry;
    {
        std::shared_lock lock(map_mu_);
        auto it = sessions_.find(session_id);
        if (it == sessions_.end())
            return std::nullopt;
        entry = it->second;
    }
    std::lock_guard lock(entry->mu);
    return entry->session;
}

std::vector<JudgeSession> SessionManager::list(std::optional<SessionState> state) const
{
    std::vector<std::shared_ptr<Entry>> entries;
    {
        std::shared_lock lock(map_mu_);
        for (const auto& [id, e] : sessions_)
            entries.push_back(e);
    }
    std::vector<std::pair<std::pair<Clock::time_point, std::uint64_t>, JudgeSession>> keyed;
    for (auto& e : entries) {
        std::lock_guard lock(e->mu);
        if (!state || e->session.state == *state)
            keyed.push_back({{e->session.opened_at, e->order}, e->session});
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<JudgeSession> out;
    out.reserve(keyed.size());
    for (auto& [k, s] : keyed)
        out.push_back(std::move(s));
    return out;
}

void SessionManager::restore(JudgeSession session)
{
    auto entry = std::make_shared<Entry>();
    entry->session = std::move(session);
    std::unique_lock lock(map_mu_);
    entry->order = next_order_++;
    sessions_[entry->session.session_id] = std::move(entry);
}

}  // namespace tts
