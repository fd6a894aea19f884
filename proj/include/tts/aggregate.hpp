// SPDX-License-Identifier: Apache-2.0
//
// Answer extraction, rule-based normalization and the single-turn
// aggregation functions: majority vote, scoring-based best-of-N, LLM-based
// best-of-N and vote-then-best.
//
// Every aggregator selects an element of its input and breaks ties by
// generation order (position in the input span).
#pragma once

#include "tts/core.hpp"
#include "tts/policy.hpp"
#include "tts/prompts.hpp"
#include "tts/verifier.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tts {

std::optional<Answer> extract_answer(std::string_view text, const ExtractionProfile& profile);

/// Canonical form of a raw answer. Rules in order: trim, collapse whitespace,
/// lowercase words, strip surrounding markup, numeric canonicalization
/// (12 significant digits), set reordering. Names of the rules that changed
/// the text are appended to `trace`.
std::string normalize(std::string_view raw, std::vector<std::string>* trace = nullptr);

Answer make_answer(std::string raw, bool apply_normalization = true);

/// Rule-based equivalence: canonical equality.
bool equivalent(const Answer& a, const Answer& b);

struct EquivalenceVerdict {
    enum class Provenance { rule_based, llm };

    bool equivalent = false;
    Provenance provenance = Provenance::rule_based;
    std::string judge_output;
};

/// Rule-based first; when canonical forms differ, one query with the
/// equivalence prompt. The reply lists the mode answer(s): a single mode
/// means the two inputs are equivalent. Throws Error(llm_unavailable) when
/// the policy fails or replies with nothing usable; callers fall back to
/// rule-based.
EquivalenceVerdict equivalent_llm(const Answer& a, const Answer& b, Policy& policy, const PromptRegistry& prompts,
                                  std::uint64_t seed);

/// Throws Error(no_extractable_answers) when no response carries an answer.
AggregationOutcome majority_vote(std::span<const Response> responses);

/// Scorer failures score 0 and are listed in the outcome.
AggregationOutcome scoring_bon(const Question& question, std::span<const Response> responses,
                               const Verifier& scorer);

struct JudgeQueryOptions {
    std::int64_t max_tokens = 4096;
    double temperature = 0.1;
    std::uint64_t seed = 0;
    int max_attempts = 3;  // one query plus two retries
};

/// Parses a judge reply into a 0-based candidate index, or nullopt when the
/// reply does not contain exactly one integer in range.
std::optional<int> parse_judge_index(std::string_view reply, int candidates, int index_base);

std::string render_selection_prompt(const Question& question, std::span<const Response> responses,
                                    const SelectionProfile& profile, const PromptRegistry& prompts);

/// Unparseable judge output after all attempts selects index 0 with
/// `fallback` set.
AggregationOutcome llm_bon(const Question& question, std::span<const Response> responses, Policy& judge,
                           const SelectionProfile& profile, const PromptRegistry& prompts,
                           const JudgeQueryOptions& options);

/// Vote, then llm_bon over the responses agreeing with the modal answer.
/// A singleton subset is selected without a judge query.
AggregationOutcome vote_then_bon(const Question& question, std::span<const Response> responses, Policy& judge,
                                 const SelectionProfile& profile, const PromptRegistry& prompts,
                                 const JudgeQueryOptions& options);

}  // namespace tts
