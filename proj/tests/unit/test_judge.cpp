// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "tts/error.hpp"
#include "tts/judge.hpp"
#include "tts/seeding.hpp"

#include <doctest.h>

#include <atomic>
#include <thread>

using namespace tts;
using testing::answer_responses;

namespace {

const PromptRegistry& registry()
{
    static const auto r = PromptRegistry::defaults();
    return r;
}

std::vector<SessionCandidate> candidates(int n)
{
    std::vector<SessionCandidate> out;
    for (int i = 0; i < n; ++i)
        out.push_back({response_id(1, i), "text " + std::to_string(i)});
    return out;
}

ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::invalid_state;
}

}  // namespace

TEST_CASE("llm judge draws the negative uniformly from the rest")
{
    const auto q = testing::math_question();
    const auto r = answer_responses({"a", "b", "c", "d", "e"});
    CannedPolicy picks_two({"2"});
    std::map<std::string, int> counts;
    const int n = 10000;
    for (std::uint64_t s = 0; s < n; ++s) {
        const auto res = llm_judge(q, r, picks_two, registry().selection("math"), registry(), {}, mix64(s));
        CHECK(res.decision.positive_id == r[2].id);
        CHECK(res.decision.negative_id != r[2].id);
        CHECK(res.decision.source == DecisionSource::llm);
        CHECK(res.outcome.kind == AggregationKind::judge_pair);
        ++counts[res.decision.negative_id];
    }
    CHECK(counts.size() == 4);
    for (const auto& [id, c] : counts)
        CHECK(std::abs(c / double(n) - 0.25) <= 0.02);
}

TEST_CASE("llm judge with two candidates and with a fallback")
{
    const auto q = testing::math_question();
    const auto two = answer_responses({"a", "b"});
    CannedPolicy zero({"0"});
    const auto res = llm_judge(q, two, zero, registry().selection("math"), registry(), {}, 7);
    CHECK(res.decision.positive_id == two[0].id);
    CHECK(res.decision.negative_id == two[1].id);

    const auto three = answer_responses({"a", "b", "c"});
    CannedPolicy rambles({"unclear"});
    const auto fb = llm_judge(q, three, rambles, registry().selection("math"), registry(), {}, 7);
    CHECK(fb.decision.source == DecisionSource::fallback);
    CHECK(fb.decision.positive_id == three[0].id);
    CHECK(fb.decision.negative_id != three[0].id);

    CHECK(code_of([&] {
              llm_judge(q, answer_responses({"a"}), zero, registry().selection("math"), registry(), {}, 1);
          }) == ErrorCode::invalid_state);
}

TEST_CASE("negative choice is reproducible per seed")
{
    const auto q = testing::math_question();
    const auto r = answer_responses({"a", "b", "c", "d"});
    CannedPolicy judge({"1"});
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto a = llm_judge(q, r, judge, registry().selection("math"), registry(), {}, s);
        const auto b = llm_judge(q, r, judge, registry().selection("math"), registry(), {}, s);
        CHECK(a.decision.negative_id == b.decision.negative_id);
    }
}

TEST_CASE("session lifecycle")
{
    SessionManager m;
    const auto s = m.open_session("run", 1, "q?", candidates(5), 60);
    CHECK(s.state == SessionState::pending);
    CHECK(s.candidates.size() == 5);
    CHECK(s.session_id == session_id_for("run", 1));
    CHECK(code_of([&] { m.open_session("run", 1, "q?", candidates(5), 60); }) == ErrorCode::duplicate_open);
    CHECK(code_of([&] { m.open_session("run", 2, "q?", candidates(1), 60); }) == ErrorCode::invalid_state);

    CHECK(code_of([&] { m.submit_decision(s.session_id, 1, 1); }) == ErrorCode::indices_equal);
    CHECK(code_of([&] { m.submit_decision(s.session_id, 5, 0); }) == ErrorCode::index_out_of_range);
    CHECK(code_of([&] { m.submit_decision(s.session_id, -1, 0); }) == ErrorCode::index_out_of_range);
    CHECK(code_of([&] { m.submit_decision("nope", 1, 0); }) == ErrorCode::not_found);

    const auto d = m.submit_decision(s.session_id, 3, 0);
    CHECK(d.positive_id == response_id(1, 3));
    CHECK(d.negative_id == response_id(1, 0));
    CHECK(d.source == DecisionSource::human);
    CHECK(m.get(s.session_id)->state == SessionState::decided);
    CHECK(code_of([&] { m.submit_decision(s.session_id, 3, 0); }) == ErrorCode::session_not_pending);
}

TEST_CASE("expiry")
{
    SessionManager m;
    std::vector<std::string> notified;
    m.set_listener([&](const JudgeSession& s) { notified.push_back(s.session_id + ":" + std::string(to_string(s.state))); });
    const auto t0 = Clock::now();
    CHECK(m.expire_sessions(t0).empty());

    m.open_session("a", 1, "q", candidates(2), 10, t0);
    m.open_session("b", 1, "q", candidates(2), 10, t0);
    m.submit_decision("b.t1", 0, 1, t0 + std::chrono::seconds(5));

    const auto expired = m.expire_sessions(t0 + std::chrono::seconds(11));
    REQUIRE(expired.size() == 1);
    CHECK(expired[0] == "a.t1");
    CHECK(m.get("b.t1")->state == SessionState::decided);
    CHECK(notified == std::vector<std::string>{"b.t1:decided", "a.t1:expired"});

    m.open_session("c", 1, "q", candidates(2), 10, t0);
    CHECK(code_of([&] { m.submit_decision("c.t1", 0, 1, t0 + std::chrono::seconds(11)); }) ==
          ErrorCode::session_not_pending);
    CHECK(m.get("c.t1")->state == SessionState::expired);
}

TEST_CASE("listing is oldest first and filters by state")
{
    SessionManager m;
    const auto t0 = Clock::now();
    m.open_session("late", 1, "q", candidates(2), 100, t0 + std::chrono::seconds(5));
    m.open_session("early", 1, "q", candidates(2), 100, t0);
    m.open_session("mid", 1, "q", candidates(2), 100, t0 + std::chrono::seconds(2));
    m.submit_decision("mid.t1", 0, 1, t0 + std::chrono::seconds(3));
    const auto pending = m.list(SessionState::pending);
    REQUIRE(pending.size() == 2);
    CHECK(pending[0].run_id == "early");
    CHECK(pending[1].run_id == "late");
    CHECK(m.list().size() == 3);
}

TEST_CASE("concurrent submit and expire leave exactly one outcome")
{
    for (int round = 0; round < 200; ++round) {
        SessionManager m;
        const auto t0 = Clock::now();
        m.open_session("r", 1, "q", candidates(3), 1, t0);
        std::atomic<int> outcomes{0};
        std::thread submitter([&] {
            try {
                m.submit_decision("r.t1", 0, 1, t0);
                ++outcomes;
            } catch (const Error&) {
            }
        });
        std::thread expirer([&] { outcomes += static_cast<int>(m.expire_sessions(t0 + std::chrono::seconds(2)).size()); });
        submitter.join();
        expirer.join();
        CHECK(outcomes.load() == 1);
        CHECK(m.get("r.t1")->state != SessionState::pending);
    }
}

TEST_CASE("session JSON view")
{
    SessionManager m;
    const auto s = m.open_session("r", 2, "what?", candidates(3), 30);
    const auto j = session_json(s);
    CHECK(j["session_id"] == "r.t2");
    CHECK(j["state"] == "pending");
    CHECK(j["candidates"].size() == 3);
    CHECK(j["candidates"][1]["index"] == 1);
    CHECK(j["candidates"][1]["response_id"] == "t1-b1");
    CHECK_FALSE(j.contains("decision"));
}
