// SPDX-License-Identifier: Apache-2.0
#include "tts/experiment.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace tts {

namespace fs = std::filesystem;

namespace {

Json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::invalid_config, "cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_config, path.string() + ": " + e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<Question> parse_questions(const Json& list, std::vector<std::string>& violations)
{
    std::vector<Question> out;
    if (!list.is_array()) {
        violations.push_back("questions must be an array");
        return out;
    }
    for (const auto& q : list) {
        try {
            auto question = q.get<Question>();
            for (auto& v : validate_question(question))
                violations.push_back("question " + question.id + ": " + v);
            out.push_back(std::move(question));
        } catch (const std::exception& e) {
            violations.push_back(std::string("question: ") + e.what());
        }
    }
    return out;
}

}  // namespace

ExperimentConfig parse_experiment(const Json& doc, const fs::path& base_dir)
{
    std::vector<std::string> violations;
    ExperimentConfig c;
    if (!doc.is_object())
        throw Error(ErrorCode::invalid_config, "config must be a JSON object");

    if (doc.contains("questions"))
        c.questions = parse_questions(doc.at("questions"), violations);
    else if (doc.contains("questions_file"))
        c.questions = parse_questions(read_json_file(resolve(base_dir, doc.at("questions_file").get<std::string>())),
                                      violations);
    else if (doc.contains("question"))
        c.questions = parse_questions(Json::array({doc.at("question")}), violations);
    else
        violations.push_back("questions missing");
    if (c.questions.empty() && violations.empty())
        violations.push_back("questions must be non-empty");

    try {
        c.scaling = doc.value("scaling", Json::object()).get<ScalingConfig>();
        for (auto& v : validate_config(c.scaling))
            violations.push_back(std::move(v));
    } catch (const std::exception& e) {
        violations.push_back(std::string("scaling: ") + e.what());
    }

    c.policy = doc.value("policy", Json::object());
    const auto backend = c.policy.value("backend", std::string("scripted"));
    if (backend == "scripted") {
        try {
            if (c.policy.contains("spec"))
                for (auto& v : c.policy.at("spec").get<ConditionedPolicySpec>().validate())
                    violations.push_back("policy.spec: " + v);
            if (c.policy.contains("per_question"))
                for (const auto& [qid, spec] : c.policy.at("per_question").items())
                    for (auto& v : spec.get<ConditionedPolicySpec>().validate())
                        violations.push_back("policy.per_question." + qid + ": " + v);
            if (!c.policy.contains("spec")) {
                for (const auto& q : c.questions)
                    if (!c.policy.value("per_question", Json::object()).contains(q.id))
                        violations.push_back("policy: no scripted spec for question " + q.id);
            }
        } catch (const std::exception& e) {
            violations.push_back(std::string("policy: ") + e.what());
        }
    } else if (backend == "http") {
        if (c.policy.value("model", std::string()).empty())
            violations.push_back("policy.model is required for the http backend");
    } else {
        violations.push_back("unknown policy backend '" + backend + "'");
    }

    c.judge = doc.value("judge", Json::object());
    const auto judge_kind = c.judge.value("kind", std::string("llm"));
    if (judge_kind != "llm" && judge_kind != "oracle")
        violations.push_back("unknown judge kind '" + judge_kind + "'");
    c.human_timeout_s = c.judge.value("human_timeout_s", std::int64_t{86400});
    if (c.human_timeout_s < 1)
        violations.push_back("judge.human_timeout_s must be positive");

    c.scorer = doc.value("scorer", Json());
    if (!c.scorer.is_null()) {
        const auto kind = c.scorer.value("kind", std::string());
        if (kind != "quality" && kind != "gold" && kind != "command")
            violations.push_back("unknown scorer kind '" + kind + "'");
    }

    c.trials = doc.value("trials", 1);
    if (c.trials < 1)
        violations.push_back("trials must be at least 1");
    c.output_dir = resolve(base_dir, doc.value("output_dir", std::string("out"))).string();
    if (doc.contains("prompt_registry"))
        c.prompt_registry = resolve(base_dir, doc.at("prompt_registry").get<std::string>()).string();
    c.refinement_profile = doc.value("refinement_profile", std::string("default"));
    c.regenerate_attempts = doc.value("regenerate_attempts", 2);
    if (c.regenerate_attempts < 0)
        violations.push_back("regenerate_attempts must be non-negative");
    c.workers = doc.value("workers", 0);

    if (!violations.empty()) {
        std::string msg;
        for (const auto& v : violations)
            msg += (msg.empty() ? "" : "; ") + v;
        throw Error(ErrorCode::invalid_config, msg);
    }
    return c;
}

ExperimentConfig load_experiment(const fs::path& path)
{
    return parse_experiment(read_json_file(path), path.parent_path());
}

RunEnvironment Backends::environment(const PromptRegistry& prompts) const
{
    RunEnvironment env;
    env.policy = policy.get();
    env.judge_policy = judge.get();
    env.task_scorer = task_scorer.get();
    env.ground_truth = ground_truth.get();
    env.prompts = prompts;
    return env;
}

namespace {

std::unique_ptr<Policy> make_policy(const Json& section, const Question& question)
{
    const auto backend = section.value("backend", std::string("scripted"));
    if (backend == "http")
        return std::make_unique<HttpPolicy>(section.get<HttpPolicyConfig>());
    const auto per_question = section.value("per_question", Json::object());
    const auto& spec = per_question.contains(question.id) ? per_question.at(question.id) : section.at("spec");
    return std::make_unique<ScriptedPolicy>(spec.get<ConditionedPolicySpec>());
}

std::map<std::string, double> quality_map(const Json& j)
{
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items())
        out[k] = v.get<double>();
    return out;
}

}  // namespace

Backends build_backends(const ExperimentConfig& config, const Question& question, const PromptRegistry& prompts)
{
    Backends b;
    b.policy = make_policy(config.policy, question);
    const auto* scripted = dynamic_cast<const ScriptedPolicy*>(b.policy.get());

    const auto kind = config.judge.value("kind", std::string("llm"));
    if (kind == "oracle") {
        std::map<std::string, double> quality;
        if (config.judge.contains("quality"))
            quality = quality_map(config.judge.at("quality"));
        else if (scripted)
            quality = scripted->spec().base.quality;
        if (quality.empty() && question.gold_answer)
            quality[*question.gold_answer] = 1.0;
        b.judge = std::make_unique<OracleJudgePolicy>(std::move(quality), prompts);
    } else if (config.judge.contains("policy")) {
        b.judge = make_policy(config.judge.at("policy"), question);
    }

    if (!config.scorer.is_null()) {
        const auto sk = config.scorer.value("kind", std::string());
        if (sk == "quality")
            b.task_scorer = std::make_unique<QualityVerifier>(quality_map(config.scorer.value("quality", Json::object())));
        else if (sk == "gold")
            b.task_scorer = std::make_unique<GoldVerifier>();
        else
            b.task_scorer = std::make_unique<CommandVerifier>(
                config.scorer.contains("command") ? std::optional(config.scorer.at("command").get<CommandProfile>())
                                                  : std::nullopt);
    } else if (scripted && !scripted->spec().base.quality.empty()) {
        b.task_scorer = std::make_unique<QualityVerifier>(scripted->spec().base.quality);
    } else {
        b.task_scorer = default_verifier_for(question);
    }
    b.ground_truth = default_verifier_for(question);
    return b;
}

std::unique_ptr<Policy> policy_from_descriptor(const Json& d, const PromptRegistry& prompts)
{
    const auto backend = d.value("backend", std::string());
    if (backend == "scripted")
        return std::make_unique<ScriptedPolicy>(d.at("spec").get<ConditionedPolicySpec>());
    if (backend == "oracle_judge")
        return std::make_unique<OracleJudgePolicy>(quality_map(d.at("quality")), prompts);
    if (backend == "canned")
        return std::make_unique<CannedPolicy>(d.at("replies").get<std::vector<std::string>>());
    if (backend == "http")
        return std::make_unique<HttpPolicy>(d.get<HttpPolicyConfig>());
    throw Error(ErrorCode::invalid_config, "unknown policy descriptor '" + backend + "'");
}

std::unique_ptr<Verifier> verifier_from_descriptor(const Json& d)
{
    const auto kind = d.value("kind", std::string());
    if (kind == "gold")
        return std::make_unique<GoldVerifier>();
    if (kind == "quality")
        return std::make_unique<QualityVerifier>(quality_map(d.at("quality")));
    if (kind == "command")
        return std::make_unique<CommandVerifier>();
    throw Error(ErrorCode::invalid_config, "unknown verifier descriptor '" + kind + "'");
}

StoredRun rebuild_run(const Json& p, const PromptRegistry& prompts)
{
    StoredRun r;
    try {
        r.question = p.at("question").get<Question>();
        r.config = p.at("config").get<ScalingConfig>();
        r.backends.policy = policy_from_descriptor(p.at("policy"), prompts);
        if (p.contains("judge") && p.at("judge") != p.at("policy"))
            r.backends.judge = policy_from_descriptor(p.at("judge"), prompts);
        if (p.contains("task_scorer"))
            r.backends.task_scorer = verifier_from_descriptor(p.at("task_scorer"));
        if (p.contains("ground_truth"))
            r.backends.ground_truth = verifier_from_descriptor(p.at("ground_truth"));
        const auto options = p.value("options", Json::object());
        r.refinement_profile = options.value("refinement_profile", std::string("default"));
        r.regenerate_attempts = options.value("regenerate_attempts", 2);
        r.human_timeout_s = options.value("human_timeout_s", std::int64_t{86400});
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::corrupt_log, std::string("run_created payload: ") + e.what());
    }
    return r;
}

std::uint64_t trial_seed(std::uint64_t base, const std::string& question_id, int trial)
{
    return derive_seed(base, {hash_text(question_id), static_cast<std::uint64_t>(trial),
                              static_cast<std::uint64_t>(SeedPurpose::trial)});
}

std::string trial_run_id(const std::string& prefix, const std::string& question_id, int trial)
{
    std::string qid;
    for (char c : question_id)
        qid += valid_run_id(std::string(1, c)) ? c : '_';
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", trial);
    return prefix + "-" + qid + "-" + buf;
}

ExperimentResult run_experiment(const ExperimentConfig& config, EventStore& store, const std::string& run_prefix,
                                SessionManager* sessions, std::function<void(const RunRecord&)> on_done)
{
    const auto prompts = config.prompt_registry ? PromptRegistry::load(*config.prompt_registry) : PromptRegistry::defaults();
    struct Task {
        const Question* question;
        int trial;
    };
    std::vector<Task> tasks;
    for (const auto& q : config.questions)
        for (int t = 0; t < config.trials; ++t)
            tasks.push_back({&q, t});

    std::vector<std::optional<RunRecord>> records(tasks.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;

    auto worker = [&] {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= tasks.size())
                return;
            try {
                const auto& task = tasks[i];
                auto backends = build_backends(config, *task.question, prompts);
                auto env = backends.environment(prompts);
                env.sink = &store;
                env.sessions = sessions;
                env.refinement_profile = config.refinement_profile;
                env.regenerate_attempts = config.regenerate_attempts;
                env.human_timeout_s = config.human_timeout_s;
                // Parking without a live session manager: sessions are re-listed when served.
                SessionManager local;
                if (!env.sessions)
                    env.sessions = &local;
                Engine engine(env);
                auto scaling = config.scaling;
                scaling.seed = trial_seed(config.scaling.seed, task.question->id, task.trial);
                auto record = engine.run(trial_run_id(run_prefix, task.question->id, task.trial), *task.question, scaling);
                if (on_done)
                    on_done(record);
                records[i] = std::move(record);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error)
                    first_error = std::current_exception();
                next.store(tasks.size());
            }
        }
    };

    int workers = config.workers > 0 ? config.workers : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);

    ExperimentResult result;
    for (auto& r : records) {
        if (!r)
            continue;
        if (r->status == RunStatus::awaiting_judge)
            result.parked_run_ids.push_back(r->run_id);
        else if (r->status == RunStatus::failed)
            result.failed_run_ids.push_back(r->run_id);
        result.records.push_back(std::move(*r));
    }
    return result;
}

std::vector<SummaryRow> summarize(const EventStore& store, const std::optional<std::string>& run_prefix)
{
    std::map<std::tuple<std::string, int, std::int64_t, int, int>, SummaryRow> rows;
    auto runs = store.list_runs();
    std::sort(runs.begin(), runs.end(), [](const RunSummary& a, const RunSummary& b) { return a.run_id < b.run_id; });
    for (const auto& s : runs) {
        if (run_prefix && s.run_id.rfind(*run_prefix + "-", 0) != 0)
            continue;
        if (s.status != RunStatus::complete && s.status != RunStatus::failed)
            continue;
        const auto record = store.load_run(s.run_id);
        const auto& c = record.config;
        auto key = std::make_tuple(record.question_id, static_cast<int>(c.strategy), c.max_tokens, c.batch_size, c.turns);
        auto& row = rows[key];
        row.question_id = record.question_id;
        row.strategy = c.strategy;
        row.max_tokens = c.max_tokens;
        row.batch_size = c.batch_size;
        row.turns = c.turns;
        row.trials += 1;
        if (record.status == RunStatus::complete && record.final_score && *record.final_score >= 1.0 - 1e-9)
            row.correct += 1;
        row.tokens_total += record.total_tokens_generated;
    }
    std::vector<SummaryRow> out;
    for (auto& [k, row] : rows)
        out.push_back(std::move(row));
    return out;
}

void write_summary_tsv(const std::vector<SummaryRow>& rows, std::ostream& out)
{
    out << "question_id\tstrategy\tC\tB\tT\ttrials\tcorrect\taccuracy\ttokens_total\n";
    for (const auto& r : rows) {
        char acc[32];
        std::snprintf(acc, sizeof acc, "%.4f", r.accuracy());
        out << r.question_id << '\t' << to_string(r.strategy) << '\t' << r.max_tokens << '\t' << r.batch_size << '\t'
            << r.turns << '\t' << r.trials << '\t' << r.correct << '\t' << acc << '\t' << r.tokens_total << '\n';
    }
}

}  // namespace tts
