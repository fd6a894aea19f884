// SPDX-License-Identifier: Apache-2.0
//
// Scorers R(x, y) in [0,1]: gold-answer match, external grading command, and
// a quality-table scorer for scripted experiments.
#pragma once

#include "tts/core.hpp"
#include "tts/json_io.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>

namespace tts {

struct ScoreResult {
    enum class Failure { command_timeout, command_crash, unparseable_score };

    double score = 0.0;
    std::optional<Failure> failure;
    std::string detail;
};

std::string_view to_string(ScoreResult::Failure f);

class Verifier {
public:
    virtual ~Verifier() = default;

    /// Never throws for per-response problems; failures score 0.
    virtual ScoreResult score(const Question& question, const Response& response) const = 0;

    virtual Json describe() const = 0;
};

/// 1 iff the extracted answer is rule-equivalent to the gold answer.
class GoldVerifier final : public Verifier {
public:
    ScoreResult score(const Question& question, const Response& response) const override;
    Json describe() const override { return Json{{"kind", "gold"}}; }
};

double score_gold(const Question& question, const Response& response);

/// Writes the response payload (extracted answer if present, else full text)
/// to `{input_file}` in a work directory, runs the bound command under a time
/// limit and parses one decimal in [0,1] from its stdout.
class CommandVerifier final : public Verifier {
public:
    explicit CommandVerifier(std::optional<CommandProfile> override_profile = std::nullopt);

    ScoreResult score(const Question& question, const Response& response) const override;
    Json describe() const override { return Json{{"kind", "command"}}; }

private:
    std::optional<CommandProfile> override_;
};

ScoreResult score_command(const CommandProfile& profile, const std::string& payload);

/// Scores the extracted canonical answer from a lookup table (unknown: 0).
class QualityVerifier final : public Verifier {
public:
    explicit QualityVerifier(std::map<std::string, double> quality);

    ScoreResult score(const Question& question, const Response& response) const override;
    Json describe() const override;

private:
    std::map<std::string, double> quality_;  // keyed by canonical answer
};

/// Ground-truth verifier for a question: gold match when a gold answer exists,
/// else the bound command, else none.
std::unique_ptr<Verifier> default_verifier_for(const Question& question);

}  // namespace tts
