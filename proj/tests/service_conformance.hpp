// SPDX-License-Identifier: Apache-2.0
//
// Black-box conformance checks for the six /v1 routes. Each failed check
// appends a message; an empty list means the service conforms.
#pragma once

#include "service_fixture.hpp"

#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace tts::testing {

inline std::vector<std::string> run_service_conformance()
{
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok)
            failures.push_back(what);
    };
    auto wait_for = [](const std::function<bool()>& pred) {
        for (int i = 0; i < 200 && !pred(); ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(25));
        return pred();
    };

    TempDir dir;
    ServiceFixture svc(dir.path());

    // Sessions queue starts empty.
    auto empty = svc.get("/v1/sessions?state=pending");
    expect(empty.status == 200 && empty.json().is_array() && empty.json().empty(), "empty pending list is 200 []");

    // POST /v1/runs
    auto created = svc.post("/v1/runs", human_run_payload("first"));
    expect(created.status == 201, "valid human config is 201, got " + std::to_string(created.status));
    expect(created.status == 201 && created.json().value("run_id", "") == "first", "201 body carries the run id");
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    auto second = svc.post("/v1/runs", human_run_payload("second"));
    expect(second.status == 201, "second run is 201");

    auto bad = human_run_payload("bad");
    bad["scaling"]["batch_size"] = 1;
    auto rejected = svc.post("/v1/runs", bad);
    expect(rejected.status == 400, "B=1 threeD is 400, got " + std::to_string(rejected.status));
    expect(rejected.body.find("judge requires B ≥ 2") != std::string::npos, "400 body lists the violation");
    auto unknown_backend = human_run_payload("bad2");
    unknown_backend["policy"]["backend"] = "telepathy";
    expect(svc.post("/v1/runs", unknown_backend).status == 400, "unknown policy backend is 400");
    expect(svc.post("/v1/runs", std::string("{not json")).status == 400, "malformed body is 400");
    expect(svc.post("/v1/runs", human_run_payload("first")).status == 409, "duplicate run id is 409");

    // Both runs park at turn 1.
    const bool parked = wait_for([&] {
        auto s = svc.get("/v1/sessions?state=pending");
        return s.status == 200 && s.json().size() == 2;
    });
    expect(parked, "two pending sessions appear");

    // GET /v1/runs/{id}
    auto run = svc.get("/v1/runs/first");
    expect(run.status == 200, "existing run is 200");
    if (run.status == 200) {
        const auto j = run.json();
        expect(j.value("status", "") == "awaiting_judge", "parked run reports awaiting_judge");
        expect(j.value("open_session_id", "") == "first.t1", "parked run view includes the open session id");
        expect(j.value("budget", 0) == 64 * 3 * 2, "run view carries the budget");
    }
    expect(svc.get("/v1/runs/nope").status == 404, "unknown run is 404");

    // GET /v1/sessions?state=pending, oldest first.
    auto pending = svc.get("/v1/sessions?state=pending");
    if (pending.status == 200 && pending.json().size() == 2) {
        const auto j = pending.json();
        expect(j[0]["run_id"] == "first" && j[1]["run_id"] == "second", "pending sessions are oldest first");
        expect(j[0]["candidates"].size() == 3, "session lists B candidates");
    }
    expect(svc.get("/v1/sessions?state=bogus").status == 400, "unknown session state filter is 400");

    // GET /v1/sessions/{id}
    auto one = svc.get("/v1/sessions/first.t1");
    expect(one.status == 200 && one.json().value("state", "") == "pending", "session detail is 200 pending");
    expect(svc.get("/v1/sessions/ghost.t1").status == 404, "unknown session is 404");

    // POST /v1/sessions/{id}/decision
    const auto events_before = svc.service->store().read_events("first").size();
    expect(svc.post("/v1/sessions/first.t1/decision", Json{{"positive_index", 1}, {"negative_index", 1}}).status == 422,
           "equal indices are 422");
    expect(svc.post("/v1/sessions/first.t1/decision", Json{{"positive_index", 7}, {"negative_index", 0}}).status == 422,
           "out-of-range index is 422");
    expect(svc.post("/v1/sessions/first.t1/decision", std::string("{}")).status == 422, "missing indices are 422");
    expect(svc.post("/v1/sessions/ghost.t1/decision", Json{{"positive_index", 1}, {"negative_index", 0}}).status == 404,
           "decision on unknown session is 404");
    expect(svc.service->store().read_events("first").size() == events_before, "rejected decisions persist nothing");

    auto decided = svc.post("/v1/sessions/first.t1/decision", Json{{"positive_index", 2}, {"negative_index", 0}});
    expect(decided.status == 200, "valid decision is 200, got " + std::to_string(decided.status));
    if (decided.status == 200) {
        const auto d = decided.json()["decision"];
        expect(d.value("positive_id", "") == "t1-b2" && d.value("negative_id", "") == "t1-b0",
               "decision view maps indices to response ids");
        expect(d.value("source", "") == "human", "decision source is human");
    }
    const auto after_first = svc.service->store().read_events("first");
    expect(after_first.size() >= events_before + 1 && after_first[events_before].type == "decision_recorded",
           "a 200 decision persists exactly one decision_recorded event");

    svc.service->wait_idle();
    const auto settled = svc.service->store().read_events("first").size();
    auto again = svc.post("/v1/sessions/first.t1/decision", Json{{"positive_index", 2}, {"negative_index", 0}});
    expect(again.status == 409, "double decision is 409, got " + std::to_string(again.status));
    svc.service->wait_idle();
    expect(svc.service->store().read_events("first").size() == settled, "a repeated decision never re-advances the run");

    auto after = svc.get("/v1/sessions?state=pending");
    if (after.status == 200) {
        bool first_t1 = false;
        for (const auto& s : after.json())
            first_t1 = first_t1 || s["session_id"] == "first.t1";
        expect(!first_t1, "decided session leaves the pending list");
    }

    // GET /v1/runs/{id}/events: resume from a sequence number, live tail, end.
    expect(svc.get("/v1/runs/nope/events?from=0").status == 404, "events of unknown run are 404");
    const bool second_turn = wait_for([&] { return svc.service->sessions().get("first.t2").has_value(); });
    expect(second_turn, "run reaches its second turn session");

    std::string tail;
    std::thread watcher([&] { tail = svc.stream("/v1/runs/first/events?from=2"); });
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    auto final_decision = svc.post("/v1/sessions/first.t2/decision", Json{{"positive_index", 0}, {"negative_index", 1}});
    expect(final_decision.status == 200, "second-turn decision is 200");
    watcher.join();
    const auto ids = stream_ids(tail);
    expect(!ids.empty() && ids.front() == 3, "stream resumes after the given sequence");
    bool contiguous = !ids.empty();
    for (std::size_t i = 1; i < ids.size(); ++i)
        contiguous = contiguous && ids[i] == ids[i - 1] + 1;
    expect(contiguous, "stream frames have contiguous sequence numbers");
    expect(tail.find("event: run_completed") != std::string::npos, "live tail delivers run completion and ends");

    const auto full = stream_ids(svc.stream("/v1/runs/first/events?from=0"));
    const auto total = svc.service->store().read_events("first").size();
    expect(full.size() == total && !full.empty() && full.front() == 1, "from=0 replays the full history then ends");
    const auto suffix = stream_ids(svc.stream("/v1/runs/first/events?from=" + std::to_string(total - 2)));
    expect(suffix.size() == 2, "mid-stream subscription returns only the suffix");

    auto done = svc.get("/v1/runs/first");
    expect(done.status == 200 && done.json().value("status", "") == "complete", "run completes after both decisions");

    return failures;
}

}  // namespace tts::testing
