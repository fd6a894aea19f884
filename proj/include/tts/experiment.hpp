// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, backend construction and the trial runner.
//
// Config document:
//   {
//     "questions": [Question, ...] | "questions_file": "path.json",
//     "scaling": ScalingConfig,
//     "policy": {"backend": "scripted", "spec": ConditionedPolicySpec,
//                "per_question": {"<question id>": ConditionedPolicySpec}}
//             | {"backend": "http", "endpoint": ..., "model": ..., ...},
//     "judge": {"kind": "llm" | "oracle", "quality": {...}, "policy": {...},
//               "human_timeout_s": 86400},
//     "scorer": {"kind": "quality" | "gold" | "command", ...},
//     "trials": 1, "output_dir": "out", "prompt_registry": "path.json",
//     "refinement_profile": "default", "regenerate_attempts": 2, "workers": 0
//   }
#pragma once

#include "tts/engine.hpp"
#include "tts/http_policy.hpp"
#include "tts/store.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace tts {

struct ExperimentConfig {
    std::vector<Question> questions;
    ScalingConfig scaling;
    Json policy;   // backend section as given
    Json judge = Json::object();
    Json scorer;   // null when absent
    int trials = 1;
    std::string output_dir = "out";
    std::optional<std::string> prompt_registry;
    std::string refinement_profile = "default";
    int regenerate_attempts = 2;
    std::int64_t human_timeout_s = 86400;
    int workers = 0;  // 0: hardware concurrency
};

/// Parses and validates a config; throws invalid_config listing every
/// violation. Relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment(const Json& doc, const std::filesystem::path& base_dir = {});

ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Policies and verifiers owned for one run.
struct Backends {
    std::unique_ptr<Policy> policy;
    std::unique_ptr<Policy> judge;
    std::unique_ptr<Verifier> task_scorer;
    std::unique_ptr<Verifier> ground_truth;

    RunEnvironment environment(const PromptRegistry& prompts) const;
};

Backends build_backends(const ExperimentConfig& config, const Question& question, const PromptRegistry& prompts);

/// Rebuilds a policy from the descriptor persisted in run_created.
std::unique_ptr<Policy> policy_from_descriptor(const Json& descriptor, const PromptRegistry& prompts);
std::unique_ptr<Verifier> verifier_from_descriptor(const Json& descriptor);

/// Backends and options of a stored run, for replay and recovery.
struct StoredRun {
    Question question;
    ScalingConfig config;
    Backends backends;
    std::string refinement_profile = "default";
    int regenerate_attempts = 2;
    std::int64_t human_timeout_s = 86400;
};

StoredRun rebuild_run(const Json& creation_payload, const PromptRegistry& prompts);

/// Seed of one trial: derived from the config seed, question id and trial.
std::uint64_t trial_seed(std::uint64_t base, const std::string& question_id, int trial);

std::string trial_run_id(const std::string& prefix, const std::string& question_id, int trial);

struct ExperimentResult {
    std::vector<RunRecord> records;
    std::vector<std::string> parked_run_ids;
    std::vector<std::string> failed_run_ids;
};

/// Runs every (question, trial) pair on a worker pool, persisting to `store`.
/// Human-judge runs park (no session manager is attached unless given).
ExperimentResult run_experiment(const ExperimentConfig& config, EventStore& store, const std::string& run_prefix,
                                SessionManager* sessions = nullptr,
                                std::function<void(const RunRecord&)> on_done = {});

struct SummaryRow {
    std::string question_id;
    Strategy strategy = Strategy::context;
    std::int64_t max_tokens = 0;
    int batch_size = 0;
    int turns = 0;
    int trials = 0;
    int correct = 0;
    std::int64_t tokens_total = 0;

    double accuracy() const { return trials ? static_cast<double>(correct) / trials : 0.0; }
};

/// One row per (question, strategy, C, B, T) over finished runs in the store.
/// A run is correct when its final score is at least 1 - 1e-9.
std::vector<SummaryRow> summarize(const EventStore& store, const std::optional<std::string>& run_prefix = std::nullopt);

void write_summary_tsv(const std::vector<SummaryRow>& rows, std::ostream& out);

}  // namespace tts
