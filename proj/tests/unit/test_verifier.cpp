// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "tts/aggregate.hpp"
#include "tts/verifier.hpp"

#include <doctest.h>

#include <chrono>

using namespace tts;
using testing::answer_response;

namespace {

CommandProfile shell(const std::string& script, double limit = 10.0)
{
    CommandProfile p;
    p.argv = {"/bin/sh", "-c", script, "scorer", "{input_file}"};
    p.time_limit_s = limit;
    return p;
}

}  // namespace

TEST_CASE("gold matching")
{
    CHECK(score_gold(testing::math_question("3/4"), answer_response(0, "0.75")) == 1.0);
    CHECK(score_gold(testing::math_question("4"), answer_response(0, "2")) == 0.0);
    auto none = answer_response(0, "4");
    none.extracted_answer.reset();
    none.text = "no section";
    CHECK(score_gold(testing::math_question("4"), none) == 0.0);
}

TEST_CASE("gold scoring is a function of text and gold")
{
    const auto q = testing::math_question("{1,2}");
    for (const char* ans : {"{2,1}", "{1, 2}", "{1,3}", "2"}) {
        const auto r = answer_response(0, ans);
        CHECK(score_gold(q, r) == score_gold(q, r));
    }
    CHECK(score_gold(q, answer_response(0, "{2, 1}")) == 1.0);
}

TEST_CASE("command scorer reads one number from stdout")
{
    const auto r = score_command(shell("echo 0.7"), "payload");
    CHECK_FALSE(r.failure);
    CHECK(r.score == doctest::Approx(0.7));

    const auto tests = score_command(shell("passed=7; echo \"running\"; echo \"0.$passed\""), "x");
    CHECK(tests.score == doctest::Approx(0.7));

    const auto reads = score_command(shell("grep -q hello \"$1\" && echo 1 || echo 0"), "hello world");
    CHECK(reads.score == 1.0);
}

TEST_CASE("command scorer failures score zero")
{
    const auto start = std::chrono::steady_clock::now();
    const auto slow = score_command(shell("sleep 5; echo 1", 0.3), "x");
    CHECK(slow.score == 0.0);
    REQUIRE(slow.failure);
    CHECK(*slow.failure == ScoreResult::Failure::command_timeout);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(3));

    const auto crash = score_command(shell("echo 0.5; exit 3"), "x");
    REQUIRE(crash.failure);
    CHECK(*crash.failure == ScoreResult::Failure::command_crash);
    CHECK(crash.score == 0.0);

    const auto words = score_command(shell("echo great"), "x");
    REQUIRE(words.failure);
    CHECK(*words.failure == ScoreResult::Failure::unparseable_score);

    const auto out_of_range = score_command(shell("echo 1.5"), "x");
    REQUIRE(out_of_range.failure);
    CHECK(*out_of_range.failure == ScoreResult::Failure::unparseable_score);

    CommandProfile missing;
    missing.argv = {"/nonexistent/grader"};
    CHECK(score_command(missing, "x").failure.has_value());
}

TEST_CASE("command verifier uses the question binding")
{
    Question q;
    q.id = "code";
    q.prompt = "write it";
    q.domain = DomainTag::code;
    q.scorer_binding = shell("grep -c return \"$1\" >/dev/null && echo 0.9 || echo 0.1");

    Response r;
    r.id = "t1-b0";
    r.text = "```cpp\nint main() { return 0; }\n```";
    r.extracted_answer = make_answer("int main() { return 0; }", false);
    CommandVerifier v;
    CHECK(v.score(q, r).score == doctest::Approx(0.9));

    const auto fallback = default_verifier_for(q);
    REQUIRE(fallback);
    CHECK(fallback->describe()["kind"] == "command");
    CHECK(default_verifier_for(testing::math_question())->describe()["kind"] == "gold");
}

TEST_CASE("quality verifier scores canonical answers")
{
    QualityVerifier v({{"3/4", 1.0}, {"2", 0.25}});
    const auto q = testing::math_question();
    CHECK(v.score(q, answer_response(0, "0.75")).score == 1.0);
    CHECK(v.score(q, answer_response(0, "2.0")).score == 0.25);
    CHECK(v.score(q, answer_response(0, "9")).score == 0.0);
}
