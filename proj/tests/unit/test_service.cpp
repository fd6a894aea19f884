// SPDX-License-Identifier: Apache-2.0
#include "service_conformance.hpp"

#include "tts/error.hpp"

#include <doctest.h>

using namespace tts;
using namespace tts::testing;

namespace {

bool eventually(const std::function<bool()>& pred, int tries = 200)
{
    for (int i = 0; i < tries && !pred(); ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
    return pred();
}

}  // namespace

TEST_CASE("route conformance")
{
    const auto failures = run_service_conformance();
    for (const auto& f : failures)
        MESSAGE(f);
    CHECK(failures.empty());
}

TEST_CASE("bearer token is required when configured")
{
    TempDir dir;
    ServiceFixture svc(dir.path());
    CHECK(svc.get("/v1/sessions", false).status == 401);
    CHECK(svc.post("/v1/runs", human_run_payload("x").dump(), false).status == 401);
    CHECK(svc.get("/v1/sessions").status == 200);
}

TEST_CASE("expired sessions resume through the fallback judge")
{
    TempDir dir;
    ServiceFixture svc(dir.path());
    REQUIRE(svc.post("/v1/runs", human_run_payload("slow", 2, 1, 1)).status == 201);
    CHECK(eventually([&] { return svc.service->sessions().get("slow.t1").has_value(); }));
    CHECK(eventually([&] { return svc.service->store().load_run("slow").status == RunStatus::complete; }));
    const auto r = svc.service->store().load_run("slow");
    REQUIRE(r.turns.size() == 1);
    REQUIRE(r.turns[0].decision);
    CHECK(r.turns[0].decision->source == DecisionSource::fallback);
    CHECK(svc.service->sessions().get("slow.t1")->state == SessionState::expired);
    CHECK(svc.post("/v1/sessions/slow.t1/decision", Json{{"positive_index", 0}, {"negative_index", 1}}).status == 409);
}

TEST_CASE("restart re-lists parked runs as pending sessions")
{
    TempDir dir;
    {
        ServiceFixture svc(dir.path());
        REQUIRE(svc.post("/v1/runs", human_run_payload("keep")).status == 201);
        CHECK(eventually([&] { return svc.service->sessions().get("keep.t1").has_value(); }));
        svc.service->wait_idle();
    }
    ServiceFixture restarted(dir.path());
    const auto pending = restarted.get("/v1/sessions?state=pending");
    REQUIRE(pending.status == 200);
    REQUIRE(pending.json().size() == 1);
    CHECK(pending.json()[0]["session_id"] == "keep.t1");
    CHECK(restarted.post("/v1/sessions/keep.t1/decision", Json{{"positive_index", 1}, {"negative_index", 0}}).status == 200);
    CHECK(eventually([&] { return restarted.service->sessions().get("keep.t2").has_value(); }));
}

TEST_CASE("long texts are elided and fetchable individually")
{
    TempDir dir;
    ServiceOptions o;
    o.port = 0;
    o.store_dir = dir.path();
    o.elide_threshold = 16;
    Service service(o);
    const int port = service.start();
    auto payload = human_run_payload("long");
    payload["scaling"]["strategy"] = "batch_vote";
    payload["scaling"]["turns"] = 1;
    httplib::Client c("127.0.0.1", port);
    REQUIRE(c.Post("/v1/runs", payload.dump(), "application/json")->status == 201);
    service.wait_idle();
    const auto view = Json::parse(c.Get("/v1/runs/long")->body);
    const auto& r0 = view["turns"][0]["responses"][0];
    CHECK(r0["text_elided"] == true);
    CHECK(r0["text"].get<std::string>().size() == 16);
    const auto full = c.Get("/v1/runs/long/responses/t1-b0");
    REQUIRE(full->status == 200);
    CHECK(Json::parse(full->body)["text"].get<std::string>().size() > 16);
    CHECK(c.Get("/v1/runs/long/responses/t9-b9")->status == 404);
    service.stop();
}

TEST_CASE("a busy port fails to bind")
{
    TempDir dir;
    ServiceFixture first(dir.path());
    ServiceOptions o;
    o.port = first.port;
    o.store_dir = dir.path();
    Service second(o);
    try {
        second.bind();
        FAIL("expected bind failure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::storage_io);
    }
}

TEST_CASE("timestamps round-trip")
{
    const auto now = Clock::now();
    const auto parsed = parse_rfc3339(to_rfc3339(now));
    REQUIRE(parsed);
    CHECK(std::chrono::abs(*parsed - now) < std::chrono::milliseconds(2));
    CHECK_FALSE(parse_rfc3339("yesterday"));
}
