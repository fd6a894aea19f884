// SPDX-License-Identifier: Apache-2.0
//
// JSON mapping of the core types. Field names are stable snake_case and are
// shared by the event store, the HTTP API and the CLI.
#pragma once

#include "tts/core.hpp"

#include <json.hpp>

namespace tts {

// Insertion-ordered so serialized records are byte-stable.
using Json = nlohmann::ordered_json;

void to_json(Json& j, const CommandProfile& v);
void from_json(const Json& j, CommandProfile& v);
void to_json(Json& j, const Question& v);
void from_json(const Json& j, Question& v);
void to_json(Json& j, const Answer& v);
void from_json(const Json& j, Answer& v);
void to_json(Json& j, const Response& v);
void from_json(const Json& j, Response& v);
void to_json(Json& j, const ScalingConfig& v);
void from_json(const Json& j, ScalingConfig& v);
void to_json(Json& j, const AggregationOutcome& v);
void from_json(const Json& j, AggregationOutcome& v);
void to_json(Json& j, const JudgeDecision& v);
void from_json(const Json& j, JudgeDecision& v);
void to_json(Json& j, const TurnRecord& v);
void from_json(const Json& j, TurnRecord& v);
void to_json(Json& j, const RunRecord& v);
void from_json(const Json& j, RunRecord& v);

/// The record without wall-clock fields (decision timestamps, judge latency).
/// Two executions of a deterministic run produce identical transcripts.
Json transcript_json(const RunRecord& record);

}  // namespace tts
