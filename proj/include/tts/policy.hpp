// SPDX-License-Identifier: Apache-2.0
//
// Generation policies. A Policy maps a prompt to one generated response of
// at most `max_tokens` tokens. Backends:
//   - ScriptedPolicy: answers drawn from a categorical table, optionally
//     shifted by sentinel markers in the prompt. Output is a pure function of
//     (prompt, seed).
//   - OracleJudgePolicy: a scripted selector that reads the numbered
//     candidates of a selection prompt and names the highest-quality one.
//   - HttpPolicy: OpenAI-style chat-completions client (http_policy.hpp).
#pragma once

#include "tts/core.hpp"
#include "tts/json_io.hpp"
#include "tts/prompts.hpp"

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tts {

struct PolicyRequest {
    std::string prompt;
    std::string system_prompt;
    std::int64_t max_tokens = 4096;
    double temperature = 0.1;
    std::uint64_t seed = 0;
};

struct Generation {
    std::string text;
    std::int64_t tokens_generated = 0;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<std::string> error;  // set iff finish_reason == error
};

/// Sentinels injected by the prompt composer for scripted backends.
inline constexpr std::string_view kPositiveMarker = "[[tts:positive-exemplar]]";
inline constexpr std::string_view kNegativeMarker = "[[tts:negative-warning]]";

class Policy {
public:
    virtual ~Policy() = default;

    /// Throws Error(provider_unreachable | provider_rejected) on failure.
    /// Token overflow is not an error: finish_reason = length.
    virtual Generation generate(const PolicyRequest& request) = 0;

    /// `count` results; element i is generated with seed
    /// derive_seed(request.seed, {i}). Per-element failures are reported as
    /// finish_reason = error rather than thrown.
    virtual std::vector<Generation> generate_batch(const PolicyRequest& request, int count);

    /// True when output is a pure function of (prompt, seed).
    virtual bool deterministic() const = 0;

    /// True when the prompt composer should inject kPositiveMarker/kNegativeMarker.
    virtual bool wants_markers() const { return false; }

    /// Backend descriptor persisted with runs so they can be rebuilt for replay.
    virtual Json describe() const = 0;
};

std::uint64_t batch_element_seed(std::uint64_t request_seed, int index);

bool has_partial_failure(const std::vector<Generation>& batch);

/// Whitespace-delimited token count.
std::int64_t count_tokens(std::string_view text);

/// Keeps at most `max_tokens` whitespace-delimited tokens.
std::string truncate_tokens(std::string_view text, std::int64_t max_tokens);

// ---------------------------------------------------------------------------
// Scripted backends
// ---------------------------------------------------------------------------

struct CategoricalPolicySpec {
    // Canonical answer -> probability, in sampling order.
    std::vector<std::pair<std::string, double>> answers;
    std::string body_template = default_body_template();
    std::map<std::string, double> quality;

    static std::string default_body_template();

    /// Violations of: non-empty, each p in [0,1], sum within 1e-9 of 1.
    std::vector<std::string> validate() const;

    double probability_of(std::string_view canonical) const;
    double quality_of(std::string_view canonical) const;

    bool operator==(const CategoricalPolicySpec&) const = default;
};

struct ConditionedPolicySpec {
    CategoricalPolicySpec base;
    std::optional<std::vector<std::pair<std::string, double>>> shift_on_positive;
    std::optional<std::vector<std::pair<std::string, double>>> shift_on_negative_warning;

    std::vector<std::string> validate() const;
};

void to_json(Json& j, const CategoricalPolicySpec& v);
void from_json(const Json& j, CategoricalPolicySpec& v);
void to_json(Json& j, const ConditionedPolicySpec& v);
void from_json(const Json& j, ConditionedPolicySpec& v);

class ScriptedPolicy final : public Policy {
public:
    /// Throws Error(invalid_spec) when the spec violates its invariants.
    explicit ScriptedPolicy(CategoricalPolicySpec spec);
    explicit ScriptedPolicy(ConditionedPolicySpec spec);

    Generation generate(const PolicyRequest& request) override;
    bool deterministic() const override { return true; }
    bool wants_markers() const override { return spec_.shift_on_positive || spec_.shift_on_negative_warning; }
    Json describe() const override;

    const ConditionedPolicySpec& spec() const { return spec_; }

    /// The distribution used for a prompt: positive marker takes precedence,
    /// then the negative marker, then the base table.
    const std::vector<std::pair<std::string, double>>& distribution_for(std::string_view prompt) const;

    /// The answer a (prompt, seed) pair samples, before rendering.
    std::string sample_answer(std::string_view prompt, std::uint64_t seed) const;

private:
    ConditionedPolicySpec spec_;
};

/// Scripted judge that knows answer quality. It splits a selection prompt at
/// the profile's candidate labels, extracts each candidate's answer and replies
/// with the label number of the best one (lowest label on ties).
class OracleJudgePolicy final : public Policy {
public:
    OracleJudgePolicy(std::map<std::string, double> quality, PromptRegistry prompts);

    Generation generate(const PolicyRequest& request) override;
    bool deterministic() const override { return true; }
    Json describe() const override;

private:
    std::map<std::string, double> quality_;
    PromptRegistry prompts_;
};

/// Replies with a fixed list of texts, cycling by call count. Not a pure
/// function of the request; used for judge-protocol tests and demos.
class CannedPolicy final : public Policy {
public:
    explicit CannedPolicy(std::vector<std::string> replies);

    Generation generate(const PolicyRequest& request) override;
    bool deterministic() const override { return false; }
    Json describe() const override;

    int calls() const;

private:
    std::vector<std::string> replies_;
    mutable std::mutex mu_;
    int calls_ = 0;
};

}  // namespace tts
