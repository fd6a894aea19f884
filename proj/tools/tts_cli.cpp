// SPDX-License-Identifier: Apache-2.0
//
// tts: run experiments, simulate vote scaling, serve the judge API, replay
// stored runs and summarize a store.
#include "tts/biassim.hpp"
#include "tts/error.hpp"
#include "tts/experiment.hpp"
#include "tts/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

#include <pthread.h>

namespace {

using namespace tts;

std::string compact_utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

struct RunArgs {
    std::string config;
    std::string prefix;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> output_dir;
    std::optional<std::int64_t> max_tokens;
    std::optional<int> batch_size;
    std::optional<int> turns;
    std::optional<std::string> strategy;
};

int cmd_run(const RunArgs& a)
{
    ExperimentConfig config;
    try {
        auto doc = Json();
        {
            std::ifstream in(a.config);
            if (!in) {
                std::cerr << "error: cannot open config " << a.config << "\n";
                return 1;
            }
            doc = Json::parse(in);
        }
        auto& scaling = doc["scaling"];
        if (scaling.is_null())
            scaling = Json::object();
        if (a.max_tokens)
            scaling["max_tokens"] = *a.max_tokens;
        if (a.batch_size)
            scaling["batch_size"] = *a.batch_size;
        if (a.turns)
            scaling["turns"] = *a.turns;
        if (a.strategy)
            scaling["strategy"] = *a.strategy;
        if (a.seed)
            scaling["seed"] = *a.seed;
        if (a.trials)
            doc["trials"] = *a.trials;
        if (a.workers)
            doc["workers"] = *a.workers;
        config = parse_experiment(doc, std::filesystem::path(a.config).parent_path());
        if (a.output_dir)
            config.output_dir = *a.output_dir;
    } catch (const Error& e) {
        std::cerr << "error: invalid config: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: invalid config: " << e.what() << "\n";
        return 1;
    }

    try {
        EventStore store(config.output_dir);
        const auto prefix =
            a.prefix.empty() ? std::filesystem::path(a.config).stem().string() + "-" + compact_utc_now() : a.prefix;
        if (!valid_run_id(prefix)) {
            std::cerr << "error: run prefix may only contain [A-Za-z0-9._-]\n";
            return 1;
        }
        auto result = run_experiment(config, store, prefix);
        const auto rows = summarize(store, prefix);
        const auto summary_path = std::filesystem::path(config.output_dir) / (prefix + ".summary.tsv");
        {
            std::ofstream out(summary_path);
            write_summary_tsv(rows, out);
        }
        write_summary_tsv(rows, std::cout);
        std::cerr << "summary: " << summary_path.string() << "\n";
        if (!result.failed_run_ids.empty())
            std::cerr << result.failed_run_ids.size() << " run(s) failed\n";
        if (!result.parked_run_ids.empty()) {
            std::cerr << "warning: " << result.parked_run_ids.size()
                      << " run(s) are awaiting a human judge; start `tts serve --store " << config.output_dir
                      << "` to list them as pending sessions:\n";
            for (const auto& id : result.parked_run_ids)
                std::cerr << "  " << id << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int cmd_simulate_vote(const std::string& spec_path, const std::string& correct, const std::vector<int>& batches,
                      std::int64_t trials, std::uint64_t seed, const std::string& out_prefix)
{
    CategoricalPolicySpec spec;
    try {
        std::ifstream in(spec_path);
        if (!in) {
            std::cerr << "error: cannot open spec " << spec_path << "\n";
            return 1;
        }
        const auto doc = Json::parse(in);
        spec = doc.contains("answers") ? doc.get<CategoricalPolicySpec>()
                                       : Json{{"answers", doc}}.get<CategoricalPolicySpec>();
        const auto violations = spec.validate();
        if (!violations.empty()) {
            for (const auto& v : violations)
                std::cerr << "error: " << v << "\n";
            return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: invalid spec: " << e.what() << "\n";
        return 1;
    }
    try {
        const auto curve = scaling_curve(spec, correct, batches, trials, seed);
        const auto limit = classify_limit(spec, correct);
        {
            std::ofstream tsv(out_prefix + ".tsv");
            write_curve_tsv(curve, tsv);
            std::ofstream svg(out_prefix + ".svg");
            write_curve_svg(curve, svg);
        }
        write_curve_tsv(curve, std::cout);
        std::cout << "limit: " << to_string(limit) << "\n";
        std::cerr << "wrote " << out_prefix << ".tsv and " << out_prefix << ".svg\n";
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::invalid_config || e.code() == ErrorCode::invalid_spec ? 1 : 2;
    }
}

int cmd_serve(ServiceOptions options)
{
    if (const char* token = std::getenv("TTS_AUTH_TOKEN"))
        options.auth_token = token;

    // Signals are taken synchronously by this thread; workers never see them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    std::unique_ptr<Service> service;
    try {
        service = std::make_unique<Service>(options);
        service->bind();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    const int recovered = service->recover();
    std::thread server([&] { service->serve(); });
    std::cerr << "listening on " << options.host << ":" << service->port() << " (store " << options.store_dir.string()
              << ", " << recovered << " run(s) recovered)\n";
    int sig = 0;
    sigwait(&set, &sig);
    std::cerr << "shutting down\n";
    service->stop();
    server.join();
    return 0;
}

int cmd_replay(const std::string& store_dir, const std::string& run_id)
{
    try {
        EventStore store(store_dir);
        const auto original = store.load_run(run_id);
        const auto prompts = PromptRegistry::defaults();
        auto stored = rebuild_run(store.creation_payload(run_id), prompts);
        auto env = stored.backends.environment(prompts);
        env.refinement_profile = stored.refinement_profile;
        env.regenerate_attempts = stored.regenerate_attempts;
        env.human_timeout_s = stored.human_timeout_s;
        const auto verdict = replay(original, stored.question, env);
        if (verdict.structural_only)
            std::cout << "structural verification (non-deterministic backend): " << (verdict.ok ? "pass" : "fail")
                      << "\n";
        else
            std::cout << (verdict.ok ? "identical" : "diverged") << "\n";
        if (!verdict.ok) {
            std::cout << "first divergence: " << verdict.first_divergence << "\n";
            return 2;
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (e.code() == ErrorCode::corrupt_log)
            return 2;
        return 1;
    }
}

int cmd_summarize(const std::string& store_dir, const std::string& prefix, const std::string& out_path)
{
    try {
        EventStore store(store_dir);
        const auto rows = summarize(store, prefix.empty() ? std::nullopt : std::optional(prefix));
        if (out_path.empty()) {
            write_summary_tsv(rows, std::cout);
        } else {
            std::ofstream out(out_path);
            write_summary_tsv(rows, out);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Test-time scaling orchestration"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Run an experiment config");
    run->add_option("config", run_args.config, "Experiment config (JSON)")->required();
    run->add_option("--run-prefix", run_args.prefix, "Run id prefix (default: config name plus UTC time)");
    run->add_option("--trials", run_args.trials, "Override trial count");
    run->add_option("--seed", run_args.seed, "Override base seed");
    run->add_option("--workers", run_args.workers, "Worker threads (default: CPU count)");
    run->add_option("--output-dir", run_args.output_dir, "Override output directory");
    run->add_option("-C,--max-tokens", run_args.max_tokens, "Override C");
    run->add_option("-B,--batch-size", run_args.batch_size, "Override B");
    run->add_option("-T,--turns", run_args.turns, "Override T");
    run->add_option("--strategy", run_args.strategy, "Override strategy");

    std::string spec_path, correct, out_prefix = "vote_curve";
    std::vector<int> batches{1, 5, 15, 51, 201};
    std::int64_t trials = 100000;
    std::uint64_t seed = 1;
    auto* sim = app.add_subcommand("simulate-vote", "Majority-vote accuracy against B");
    sim->add_option("--spec", spec_path, "Answer distribution (JSON)")->required();
    sim->add_option("--correct", correct, "Correct answer")->required();
    sim->add_option("--batches", batches, "B values, strictly increasing")->delimiter(',');
    sim->add_option("--trials", trials, "Monte-Carlo trials where exact is infeasible");
    sim->add_option("--seed", seed, "Monte-Carlo seed");
    sim->add_option("--out", out_prefix, "Output prefix for .tsv and .svg");

    ServiceOptions serve_opts;
    std::string serve_store = serve_opts.store_dir.string();
    int tick_ms = 1000;
    auto* serve = app.add_subcommand("serve", "Serve the HTTP API (auth token from TTS_AUTH_TOKEN)");
    serve->add_option("--store", serve_store, "Store directory");
    serve->add_option("--host", serve_opts.host, "Listen address");
    serve->add_option("--port", serve_opts.port, "Listen port");
    serve->add_option("--workers", serve_opts.workers, "Run worker threads (default: CPU count)");
    serve->add_option("--tick-ms", tick_ms, "Session expiry check interval");

    std::string replay_store = "tts-store", replay_id;
    auto* rep = app.add_subcommand("replay", "Re-execute a stored run and compare transcripts");
    rep->add_option("--store", replay_store, "Store directory");
    rep->add_option("run_id", replay_id, "Run id")->required();

    std::string sum_store = "tts-store", sum_prefix, sum_out;
    auto* sum = app.add_subcommand("summarize", "Summary table from a store");
    sum->add_option("--store", sum_store, "Store directory");
    sum->add_option("--run-prefix", sum_prefix, "Only runs with this prefix");
    sum->add_option("--out", sum_out, "Write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (*run)
        return cmd_run(run_args);
    if (*sim)
        return cmd_simulate_vote(spec_path, correct, batches, trials, seed, out_prefix);
    if (*serve) {
        serve_opts.store_dir = serve_store;
        serve_opts.tick = std::chrono::milliseconds(tick_ms);
        return cmd_serve(serve_opts);
    }
    if (*rep)
        return cmd_replay(replay_store, replay_id);
    if (*sum)
        return cmd_summarize(sum_store, sum_prefix, sum_out);
    return 1;
}
