// SPDX-License-Identifier: Apache-2.0
#include "tts/service.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include <sys/socket.h>

namespace tts {

std::optional<Clock::time_point> parse_rfc3339(std::string_view text)
{
    int y, mo, d, h, mi, s, ms = 0;
    const std::string str(text);
    if (std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3dZ", &y, &mo, &d, &h, &mi, &s, &ms) < 6)
        return std::nullopt;
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = s;
    const std::time_t t = timegm(&tm);
    return Clock::from_time_t(t) + std::chrono::milliseconds(ms);
}

namespace {

int status_for(ErrorCode code)
{
    switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::session_not_pending:
    case ErrorCode::duplicate_open: return 409;
    case ErrorCode::index_out_of_range:
    case ErrorCode::indices_equal: return 422;
    case ErrorCode::invalid_config:
    case ErrorCode::invalid_spec:
    case ErrorCode::scorer_missing:
    case ErrorCode::template_missing: return 400;
    default: return 500;
    }
}

std::vector<std::string> split_violations(const std::string& msg)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = msg.find("; ", start);
        out.push_back(msg.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos)
            break;
        start = pos + 2;
    }
    return out;
}

void send_json(httplib::Response& res, int status, const Json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e)
{
    Json body{{"error", to_string(e.code())}, {"message", e.what()}};
    if (e.code() == ErrorCode::invalid_config || e.code() == ErrorCode::invalid_spec)
        body["violations"] = split_violations(e.what());
    send_json(res, status_for(e.code()), body);
}

bool terminal(std::string_view type) { return type == event::run_completed || type == event::run_failed; }

// Fixed-size pool running queued closures.
class WorkerPool {
public:
    explicit WorkerPool(int n)
    {
        for (int i = 0; i < n; ++i)
            threads_.emplace_back([this] { loop(); });
    }
    ~WorkerPool() { shutdown(); }

    void submit(std::function<void()> task)
    {
        {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(task));
            ++outstanding_;
        }
        cv_.notify_one();
    }

    void wait_idle()
    {
        std::unique_lock lock(mu_);
        idle_.wait(lock, [this] { return outstanding_ == 0; });
    }

    void shutdown()
    {
        {
            std::lock_guard lock(mu_);
            if (stopping_)
                return;
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_)
            t.join();
    }

private:
    void loop()
    {
        while (true) {
            std::function<void()> task;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
                if (queue_.empty())
                    return;
                task = std::move(queue_.front());
                queue_.pop_front();
            }
            task();
            {
                std::lock_guard lock(mu_);
                --outstanding_;
            }
            idle_.notify_all();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_, idle_;
    std::deque<std::function<void()>> queue_;
    std::vector<std::thread> threads_;
    std::size_t outstanding_ = 0;
    bool stopping_ = false;
};

struct LiveRun {
    std::mutex mu;
    Question question;
    RunRecord record;
    Backends backends;
    std::unique_ptr<Engine> engine;
};

}  // namespace

struct Service::Impl {
    ServiceOptions options;
    PromptRegistry prompts;
    EventStore store;
    SessionManager sessions;
    httplib::Server server;
    std::unique_ptr<WorkerPool> pool;
    std::mutex runs_mu;
    std::map<std::string, std::shared_ptr<LiveRun>> runs;
    std::atomic<bool> stopping{false};
    std::atomic<std::uint64_t> counter{0};
    std::thread server_thread;
    std::thread ticker;
    std::mutex tick_mu;
    std::condition_variable tick_cv;
    int bound_port = -1;

    explicit Impl(ServiceOptions o)
        : options(std::move(o)),
          prompts(options.prompt_registry ? PromptRegistry::load(*options.prompt_registry) : PromptRegistry::defaults()),
          store(options.store_dir)
    {
        int n = options.workers > 0 ? options.workers : static_cast<int>(std::thread::hardware_concurrency());
        pool = std::make_unique<WorkerPool>(std::max(n, 1));
        sessions.set_listener([this](const JudgeSession& s) {
            if (s.state == SessionState::expired)
                schedule(s.run_id, [this](LiveRun& run) {
                    if (run.record.status == RunStatus::awaiting_judge)
                        run.engine->record_fallback(run.record, run.question);
                });
        });
        routes();
    }

    std::shared_ptr<LiveRun> find(const std::string& run_id)
    {
        std::lock_guard lock(runs_mu);
        auto it = runs.find(run_id);
        return it == runs.end() ? nullptr : it->second;
    }

    std::shared_ptr<LiveRun> make_live(const std::string& run_id, Question question, Backends backends,
                                       const std::string& refinement_profile, int regenerate_attempts,
                                       std::int64_t human_timeout_s)
    {
        auto run = std::make_shared<LiveRun>();
        run->question = std::move(question);
        run->backends = std::move(backends);
        auto env = run->backends.environment(prompts);
        env.sink = &store;
        env.sessions = &sessions;
        env.refinement_profile = refinement_profile;
        env.regenerate_attempts = regenerate_attempts;
        env.human_timeout_s = human_timeout_s;
        run->engine = std::make_unique<Engine>(env);
        std::lock_guard lock(runs_mu);
        runs[run_id] = run;
        return run;
    }

    // Runs `step` under the run's lock on the pool, then advances the run.
    void schedule(const std::string& run_id, std::function<void(LiveRun&)> step)
    {
        auto run = find(run_id);
        if (!run)
            return;
        pool->submit([run, step = std::move(step)] {
            std::lock_guard lock(run->mu);
            try {
                if (step)
                    step(*run);
                run->engine->advance(run->record, run->question);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "run %s: %s\n", run->record.run_id.c_str(), e.what());
            }
        });
    }

    std::string create_run(const Json& payload)
    {
        auto config = parse_experiment(payload);
        if (config.questions.size() != 1)
            throw Error(ErrorCode::invalid_config, "a run takes exactly one question");
        std::string run_id;
        if (payload.contains("run_id")) {
            run_id = payload.at("run_id").get<std::string>();
            if (!valid_run_id(run_id))
                throw Error(ErrorCode::invalid_config, "run_id may only contain [A-Za-z0-9._-]");
            if (store.exists(run_id))
                throw Error(ErrorCode::duplicate_open, "run " + run_id + " already exists");
        } else {
            char buf[64];
            const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 Clock::now().time_since_epoch()).count();
            std::snprintf(buf, sizeof buf, "run-%lld-%04llx", static_cast<long long>(now),
                          static_cast<unsigned long long>(counter.fetch_add(1) & 0xffff));
            run_id = buf;
        }
        const auto& question = config.questions.front();
        std::shared_ptr<LiveRun> run;
        try {
            run = make_live(run_id, question, build_backends(config, question, prompts), config.refinement_profile,
                            config.regenerate_attempts, config.human_timeout_s);
            std::lock_guard lock(run->mu);
            run->record = run->engine->start(run_id, question, config.scaling);
        } catch (...) {
            std::lock_guard lock(runs_mu);
            runs.erase(run_id);
            throw;
        }
        schedule(run_id, {});
        return run_id;
    }

    int recover()
    {
        int recovered = 0;
        for (const auto& summary : store.list_runs()) {
            if (summary.status != RunStatus::running && summary.status != RunStatus::awaiting_judge)
                continue;
            if (find(summary.run_id))
                continue;
            try {
                auto stored = rebuild_run(store.creation_payload(summary.run_id), prompts);
                auto run = make_live(summary.run_id, stored.question, std::move(stored.backends),
                                     stored.refinement_profile, stored.regenerate_attempts, stored.human_timeout_s);
                {
                    std::lock_guard lock(run->mu);
                    run->record = store.load_run(summary.run_id);
                    if (run->record.status == RunStatus::awaiting_judge)
                        restore_session(*run, stored.human_timeout_s);
                }
                if (run->record.status == RunStatus::running)
                    schedule(summary.run_id, {});
                ++recovered;
            } catch (const std::exception& e) {
                std::fprintf(stderr, "recover %s: %s\n", summary.run_id.c_str(), e.what());
            }
        }
        return recovered;
    }

    void restore_session(LiveRun& run, std::int64_t timeout_s)
    {
        const auto& turn = run.record.turns.back();
        JudgeSession s;
        s.session_id = run.record.open_session_id.value_or(session_id_for(run.record.run_id, turn.turn_index));
        s.run_id = run.record.run_id;
        s.turn_index = turn.turn_index;
        s.question = run.question.prompt;
        for (const auto& r : turn.responses)
            s.candidates.push_back({r.id, r.text});
        s.timeout_s = timeout_s;
        s.opened_at = Clock::now();
        for (const auto& e : store.read_events(run.record.run_id, 0))
            if (e.type == event::session_opened && e.payload.value("session_id", "") == s.session_id) {
                s.timeout_s = e.payload.value("timeout_s", timeout_s);
                if (auto t = parse_rfc3339(e.payload.value("opened_at", "")))
                    s.opened_at = *t;
            }
        sessions.restore(std::move(s));
    }

    Json record_view(const RunRecord& record) const
    {
        Json j = record;
        const auto limit = options.elide_threshold;
        for (auto& turn : j["turns"]) {
            auto prompt = turn["prompt_used"].get<std::string>();
            if (prompt.size() > limit) {
                turn["prompt_used"] = prompt.substr(0, limit);
                turn["prompt_elided"] = true;
            }
            for (auto& r : turn["responses"]) {
                const auto text = r["text"].get<std::string>();
                if (text.size() > limit) {
                    r["text"] = text.substr(0, limit);
                    r["text_elided"] = true;
                    r["text_length"] = text.size();
                }
            }
        }
        j["budget"] = budget(record.config);
        return j;
    }

    Json session_view(const JudgeSession& s)
    {
        Json j = session_json(s);
        j["batch_size"] = s.candidates.size();
        if (auto run = find(s.run_id))
            j["turns"] = run->record.config.turns;
        return j;
    }

    void routes()
    {
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            if (options.auth_token.empty())
                return httplib::Server::HandlerResponse::Unhandled;
            if (req.get_header_value("Authorization") == "Bearer " + options.auth_token)
                return httplib::Server::HandlerResponse::Unhandled;
            send_json(res, 401, Json{{"error", "unauthorized"}, {"message", "missing or invalid bearer token"}});
            return httplib::Server::HandlerResponse::Handled;
        });

        server.Post("/v1/runs", [this](const httplib::Request& req, httplib::Response& res) {
            Json body;
            try {
                body = Json::parse(req.body);
            } catch (const nlohmann::json::exception& e) {
                send_json(res, 400, Json{{"error", "invalid_config"}, {"message", e.what()}, {"violations", {e.what()}}});
                return;
            }
            try {
                const auto id = create_run(body);
                res.set_header("Location", "/v1/runs/" + id);
                send_json(res, 201, Json{{"run_id", id}, {"status", "running"}});
            } catch (const Error& e) {
                send_error(res, e);
            } catch (const nlohmann::json::exception& e) {
                send_json(res, 400, Json{{"error", "invalid_config"}, {"message", e.what()}, {"violations", {e.what()}}});
            }
        });

        server.Get("/v1/runs", [this](const httplib::Request& req, httplib::Response& res) {
            RunFilter filter;
            if (req.has_param("status"))
                filter.status = parse_status(req.get_param_value("status"));
            if (req.has_param("strategy"))
                filter.strategy = parse_strategy(req.get_param_value("strategy"));
            if (req.has_param("question_id"))
                filter.question_id = req.get_param_value("question_id");
            Json out = Json::array();
            for (const auto& s : store.list_runs(filter))
                out.push_back(to_json(s));
            send_json(res, 200, out);
        });

        server.Get(R"(/v1/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                send_json(res, 200, record_view(store.load_run(req.matches[1])));
            } catch (const Error& e) {
                send_error(res, e);
            }
        });

        server.Get(R"(/v1/runs/([^/]+)/responses/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                const auto record = store.load_run(req.matches[1]);
                const auto* r = record.find_response(std::string(req.matches[2]));
                if (!r)
                    throw Error(ErrorCode::not_found, "unknown response " + std::string(req.matches[2]));
                send_json(res, 200, *r);
            } catch (const Error& e) {
                send_error(res, e);
            }
        });

        server.Get(R"(/v1/runs/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string run_id = req.matches[1];
            if (!store.exists(run_id)) {
                send_error(res, Error(ErrorCode::not_found, "unknown run " + run_id));
                return;
            }
            std::int64_t from = 0;
            try {
                if (req.has_param("from"))
                    from = std::stoll(req.get_param_value("from"));
                else if (req.has_header("Last-Event-ID"))
                    from = std::stoll(req.get_header_value("Last-Event-ID"));
            } catch (const std::exception&) {
                send_json(res, 400, Json{{"error", "invalid_config"}, {"message", "from must be an integer"}});
                return;
            }
            auto cursor = std::make_shared<std::int64_t>(std::max<std::int64_t>(from, 0));
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [this, run_id, cursor](std::size_t, httplib::DataSink& sink) {
                    if (stopping) {
                        sink.done();
                        return true;
                    }
                    std::vector<StoredEvent> events;
                    try {
                        events = store.read_events(run_id, *cursor);
                    } catch (const Error&) {
                        sink.done();
                        return true;
                    }
                    bool ended = false;
                    for (const auto& e : events) {
                        const auto frame = "id: " + std::to_string(e.seq) + "\nevent: " + e.type +
                                           "\ndata: " + to_json(e).dump() + "\n\n";
                        if (!sink.write(frame.data(), frame.size()))
                            return false;
                        *cursor = e.seq;
                        ended = ended || terminal(e.type);
                    }
                    if (ended) {
                        sink.done();
                        return true;
                    }
                    if (events.empty()) {
                        if (!sink.is_writable())
                            return false;
                        store.wait_for_events(run_id, *cursor, std::chrono::milliseconds(250));
                    }
                    return true;
                });
        });

        server.Get("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            std::optional<SessionState> state;
            if (req.has_param("state")) {
                const auto s = req.get_param_value("state");
                if (s == "pending")
                    state = SessionState::pending;
                else if (s == "decided")
                    state = SessionState::decided;
                else if (s == "expired")
                    state = SessionState::expired;
                else {
                    send_json(res, 400, Json{{"error", "invalid_config"}, {"message", "unknown state '" + s + "'"}});
                    return;
                }
            }
            Json out = Json::array();
            for (const auto& s : sessions.list(state))
                out.push_back(session_view(s));
            send_json(res, 200, out);
        });

        server.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = sessions.get(req.matches[1]);
            if (!s) {
                send_error(res, Error(ErrorCode::not_found, "unknown session " + std::string(req.matches[1])));
                return;
            }
            send_json(res, 200, session_view(*s));
        });

        server.Post(R"(/v1/sessions/([^/]+)/decision)", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string session_id = req.matches[1];
            auto session = sessions.get(session_id);
            if (!session) {
                send_error(res, Error(ErrorCode::not_found, "unknown session " + session_id));
                return;
            }
            int positive = 0, negative = 0;
            std::optional<std::string> rationale;
            try {
                const auto body = Json::parse(req.body);
                positive = body.at("positive_index").get<int>();
                negative = body.at("negative_index").get<int>();
                if (body.contains("rationale") && body.at("rationale").is_string())
                    rationale = body.at("rationale").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                send_json(res, 422, Json{{"error", "index_out_of_range"}, {"message", e.what()}});
                return;
            }
            auto run = find(session->run_id);
            if (!run) {
                send_error(res, Error(ErrorCode::not_found, "run " + session->run_id + " is not live"));
                return;
            }
            try {
                JudgeDecision decision;
                {
                    std::lock_guard lock(run->mu);
                    decision = sessions.submit_decision(session_id, positive, negative);
                    decision.rationale = rationale;
                    run->engine->record_decision(run->record, decision);
                }
                schedule(session->run_id, {});
                send_json(res, 200, Json{{"session_id", session_id}, {"run_id", session->run_id}, {"decision", decision}});
            } catch (const Error& e) {
                send_error(res, e);
            }
        });
    }

    void start_ticker()
    {
        ticker = std::thread([this] {
            std::unique_lock lock(tick_mu);
            while (!stopping) {
                tick_cv.wait_for(lock, options.tick);
                if (stopping)
                    break;
                lock.unlock();
                sessions.expire_sessions(Clock::now());
                lock.lock();
            }
        });
    }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::recover() { return impl_->recover(); }

int Service::bind()
{
    auto& i = *impl_;
    if (i.options.port == 0) {
        i.bound_port = i.server.bind_to_any_port(i.options.host);
    } else if (i.server.bind_to_port(i.options.host, i.options.port)) {
        i.bound_port = i.options.port;
    } else {
        i.bound_port = -1;
    }
    if (i.bound_port < 0)
        throw Error(ErrorCode::storage_io,
                    "cannot bind " + i.options.host + ":" + std::to_string(i.options.port));
    if (!i.ticker.joinable())
        i.start_ticker();
    return i.bound_port;
}

void Service::serve() { impl_->server.listen_after_bind(); }

int Service::start()
{
    const int p = bind();
    impl_->server_thread = std::thread([this] { serve(); });
    impl_->server.wait_until_ready();
    return p;
}

void Service::stop()
{
    auto& i = *impl_;
    if (i.stopping.exchange(true))
        return;
    i.server.stop();
    if (i.server_thread.joinable())
        i.server_thread.join();
    i.tick_cv.notify_all();
    if (i.ticker.joinable())
        i.ticker.join();
    i.pool->shutdown();
}

int Service::port() const { return impl_->bound_port; }

void Service::wait_idle() { impl_->pool->wait_idle(); }

EventStore& Service::store() { return impl_->store; }

SessionManager& Service::sessions() { return impl_->sessions; }

std::string Service::create_run(const Json& payload) { return impl_->create_run(payload); }

}  // namespace tts
