// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "tts/aggregate.hpp"
#include "tts/error.hpp"
#include "tts/verifier.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace tts;
using testing::answer_responses;

namespace {

const PromptRegistry& registry()
{
    static const auto r = PromptRegistry::defaults();
    return r;
}

class TableVerifier final : public Verifier {
public:
    explicit TableVerifier(std::vector<double> scores) : scores_(std::move(scores)) {}

    ScoreResult score(const Question&, const Response& r) const override
    {
        return {scores_.at(static_cast<std::size_t>(r.batch_index)), std::nullopt, {}};
    }
    Json describe() const override { return Json{{"kind", "table"}}; }

private:
    std::vector<double> scores_;
};

}  // namespace

TEST_CASE("extraction follows the final-answer section")
{
    const auto& math = registry().extraction("math");
    const auto a = extract_answer("intro\n*** Final Answer ***\n4\n*** Reasoning ***\nwork", math);
    REQUIRE(a);
    CHECK(a->raw == "4");
    CHECK_FALSE(extract_answer("no answer here", math));

    const auto& code = registry().extraction("code");
    const auto c = extract_answer("Here:\n```cpp\nint main() { return 0; }\n```\n", code);
    REQUIRE(c);
    CHECK(c->raw == "int main() { return 0; }");

    const auto& physics = registry().extraction("physics");
    const auto p = extract_answer("*** Key Final Answer ***\n9.8 m/s^2\n", physics);
    REQUIRE(p);
    CHECK(p->raw == "9.8 m/s^2");
}

TEST_CASE("normalization examples")
{
    CHECK(normalize("3/4") == "0.75");
    CHECK(normalize("75%") == "0.75");
    CHECK(normalize("{3,1,2}") == "{1,2,3}");
    CHECK(normalize("2") == "2");
    CHECK(normalize("2.0") == "2");
    CHECK(normalize("  \\boxed{42}  ") == "42");
    CHECK(normalize("$\\frac{1}{2}$") == "0.5");
    CHECK(normalize("The   Answer") == "the answer");
    CHECK(normalize("-0") == "0");
    CHECK(normalize("x>0") == "x>0");

    std::vector<std::string> trace;
    normalize(" 3/4 ", &trace);
    CHECK(std::find(trace.begin(), trace.end(), "trim") != trace.end());
    CHECK(std::find(trace.begin(), trace.end(), "numeric") != trace.end());
}

TEST_CASE("rule-based equivalence")
{
    CHECK(equivalent(make_answer("2"), make_answer("2.0")));
    CHECK(equivalent(make_answer("0.75"), make_answer("3/4")));
    CHECK(equivalent(make_answer("{1, 2, 3}"), make_answer("{3, 2, 1}")));
    CHECK_FALSE(equivalent(make_answer("x>0"), make_answer("(0,\\infty)")));
}

TEST_CASE("llm-assisted equivalence records provenance")
{
    CannedPolicy says_one({"x>0"});
    const auto v = equivalent_llm(make_answer("x>0"), make_answer("(0,\\infty)"), says_one, registry(), 1);
    CHECK(v.equivalent);
    CHECK(v.provenance == EquivalenceVerdict::Provenance::llm);

    CannedPolicy says_two({"x>0, (0,\\infty)"});
    CHECK_FALSE(equivalent_llm(make_answer("x>0"), make_answer("(0,\\infty)"), says_two, registry(), 1).equivalent);

    CannedPolicy never({"never called"});
    const auto same = equivalent_llm(make_answer("2"), make_answer("2.0"), never, registry(), 1);
    CHECK(same.provenance == EquivalenceVerdict::Provenance::rule_based);
    CHECK(never.calls() == 0);

    CannedPolicy down({"<unreachable>"});
    try {
        equivalent_llm(make_answer("a"), make_answer("b"), down, registry(), 1);
        FAIL("expected llm_unavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::llm_unavailable);
    }
}

TEST_CASE("majority vote examples")
{
    const auto r = answer_responses({"2", "4", "2"});
    const auto out = majority_vote(r);
    CHECK(out.kind == AggregationKind::vote);
    CHECK(out.selected_id == r[0].id);
    REQUIRE(out.tallies);
    CHECK(out.tallies->size() == 2);
    CHECK((*out.tallies)[0].answer == "2");
    CHECK((*out.tallies)[0].count == 2);
    CHECK((*out.tallies)[1].count == 1);

    const auto one = answer_responses({"4"});
    CHECK(majority_vote(one).selected_id == one[0].id);

    const auto tie = answer_responses({"a", "b"});
    CHECK(majority_vote(tie).selected_id == tie[0].id);

    auto none = answer_responses({"a", "b"});
    for (auto& x : none)
        x.extracted_answer.reset();
    CHECK_THROWS_AS(majority_vote(none), Error);

    auto partial = answer_responses({"a", "b", "b"});
    partial[1].extracted_answer.reset();
    const auto p = majority_vote(partial);
    CHECK(p.abstentions == 1);
    CHECK(p.selected_id == partial[0].id);
}

TEST_CASE("vote groups equivalent answers")
{
    const auto r = answer_responses({"0.5", "1/2", "2", "50%"});
    const auto out = majority_vote(r);
    CHECK(out.selected_id == r[0].id);
    CHECK((*out.tallies)[0].count == 3);
}

TEST_CASE("strict-majority vote is permutation invariant")
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<std::string> answers;
        const int b = 3 + static_cast<int>(rng() % 10);
        for (int i = 0; i < b; ++i)
            answers.push_back(std::to_string(rng() % 3));
        auto r = answer_responses(answers);
        const auto base = majority_vote(r);
        const auto& t = *base.tallies;
        const int top = std::max_element(t.begin(), t.end(), [](auto& x, auto& y) { return x.count < y.count; })->count;
        if (std::count_if(t.begin(), t.end(), [&](auto& x) { return x.count == top; }) != 1)
            continue;
        const auto modal = r[std::stoi(base.selected_id.substr(base.selected_id.find('b') + 1))]
                               .extracted_answer->canonical;
        std::shuffle(r.begin(), r.end(), rng);
        const auto shuffled = majority_vote(r);
        const auto* sel = std::find_if(r.data(), r.data() + r.size(),
                                       [&](const Response& x) { return x.id == shuffled.selected_id; });
        CHECK(sel->extracted_answer->canonical == modal);
    }
}

TEST_CASE("scoring-based best-of-N")
{
    const auto q = testing::math_question();
    auto r = answer_responses({"a", "b", "c"});
    CHECK(scoring_bon(q, r, TableVerifier({0.2, 0.9, 0.5})).selected_id == r[1].id);
    auto two = answer_responses({"a", "b"});
    CHECK(scoring_bon(q, two, TableVerifier({0.7, 0.7})).selected_id == two[0].id);
    CHECK(scoring_bon(q, two, TableVerifier({0.3, 0.7})).selected_id == two[1].id);

    r[1].finish_reason = FinishReason::error;
    const auto out = scoring_bon(q, r, TableVerifier({0.2, 0.9, 0.5}));
    CHECK(out.selected_id == r[2].id);
    CHECK(out.scores[1] == 0.0);
}

TEST_CASE("judge index parsing honors the profile base")
{
    CHECK(parse_judge_index("1", 3, 0) == 1);
    CHECK(parse_judge_index("Solution 2", 3, 1) == 1);
    CHECK(parse_judge_index("  0\n", 2, 0) == 0);
    CHECK_FALSE(parse_judge_index("the best is clearly the second", 3, 0));
    CHECK_FALSE(parse_judge_index("3", 3, 0));
    CHECK_FALSE(parse_judge_index("-1", 3, 0));
    CHECK_FALSE(parse_judge_index("1 or 2", 3, 0));
}

TEST_CASE("llm best-of-N protocol")
{
    const auto q = testing::math_question();
    const auto r = answer_responses({"a", "b", "c"});
    const JudgeQueryOptions opts{.max_tokens = 16, .seed = 5};

    CannedPolicy picks_one({"1"});
    const auto out = llm_bon(q, r, picks_one, registry().selection("math"), registry(), opts);
    CHECK(out.kind == AggregationKind::bon_llm);
    CHECK(out.selected_id == r[1].id);
    CHECK_FALSE(out.fallback);
    CHECK(out.judge_queries == 1);
    CHECK(out.judge_latency_ms.has_value());

    CannedPolicy code_judge({"Solution 2"});
    CHECK(llm_bon(q, r, code_judge, registry().selection("code"), registry(), opts).selected_id == r[1].id);

    CannedPolicy rambles({"the best is clearly the good one"});
    const auto fb = llm_bon(q, r, rambles, registry().selection("math"), registry(), opts);
    CHECK(fb.fallback);
    CHECK(fb.selected_id == r[0].id);
    CHECK(rambles.calls() == 3);

    CannedPolicy late({"hmm", "2"});
    const auto retried = llm_bon(q, r, late, registry().selection("math"), registry(), opts);
    CHECK(retried.selected_id == r[2].id);
    CHECK(retried.judge_queries == 2);
}

TEST_CASE("selection prompt lists numbered candidates in order")
{
    const auto q = testing::math_question();
    const auto r = answer_responses({"a", "b"});
    const auto text = render_selection_prompt(q, r, registry().selection("math"), registry());
    const auto c0 = text.find("Candidate 0:");
    const auto c1 = text.find("Candidate 1:");
    CHECK(c0 != std::string::npos);
    CHECK(c1 > c0);
    CHECK(text.find(q.prompt) != std::string::npos);
    const auto code = render_selection_prompt(q, r, registry().selection("code"), registry());
    CHECK(code.find("Solution 1:") != std::string::npos);
    CHECK(code.find("Solution 2:") != std::string::npos);
}

TEST_CASE("vote then best-of-N")
{
    const auto q = testing::math_question();
    const JudgeQueryOptions opts{.seed = 1};
    const auto r = answer_responses({"2", "2", "4"});
    CannedPolicy picks_second({"1"});
    const auto out = vote_then_bon(q, r, picks_second, registry().selection("math"), registry(), opts);
    CHECK(out.kind == AggregationKind::vote_then_bon);
    CHECK(out.selected_id == r[1].id);
    REQUIRE(out.tallies);

    const auto distinct = answer_responses({"1", "2", "3"});
    CannedPolicy unused({"2"});
    const auto single = vote_then_bon(q, distinct, unused, registry().selection("math"), registry(), opts);
    CHECK(single.selected_id == distinct[0].id);
    CHECK(unused.calls() == 0);
    CHECK(single.judge_tokens == 0);
}

TEST_CASE("every aggregator returns an element of its input")
{
    std::mt19937_64 rng(11);
    const auto q = testing::math_question();
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> answers;
        const int b = 1 + static_cast<int>(rng() % 8);
        std::vector<double> scores;
        for (int i = 0; i < b; ++i) {
            answers.push_back(std::to_string(rng() % 4));
            scores.push_back(static_cast<double>(rng() % 5) / 4.0);
        }
        const auto r = answer_responses(answers);
        auto in_input = [&](const std::string& id) {
            return std::any_of(r.begin(), r.end(), [&](const Response& x) { return x.id == id; });
        };
        CannedPolicy judge({std::to_string(rng() % static_cast<unsigned>(b + 2))});
        CHECK(in_input(majority_vote(r).selected_id));
        const auto sb = scoring_bon(q, r, TableVerifier(scores));
        CHECK(in_input(sb.selected_id));
        CHECK(sb.scores[static_cast<std::size_t>(std::stoi(sb.selected_id.substr(4)))] ==
              *std::max_element(scores.begin(), scores.end()));
        CHECK(in_input(llm_bon(q, r, judge, registry().selection("math"), registry(), {}).selected_id));
        CHECK(in_input(vote_then_bon(q, r, judge, registry().selection("math"), registry(), {}).selected_id));
    }
}
