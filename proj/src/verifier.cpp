// SPDX-License-Identifier: Apache-2.0
#include "tts/verifier.hpp"
#include "tts/aggregate.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace tts {

namespace fs = std::filesystem;

std::string_view to_string(ScoreResult::Failure f)
{
    switch (f) {
    case ScoreResult::Failure::command_timeout: return "command_timeout";
    case ScoreResult::Failure::command_crash: return "command_crash";
    case ScoreResult::Failure::unparseable_score: return "unparseable_score";
    }
    return "unknown";
}

ScoreResult GoldVerifier::score(const Question& question, const Response& response) const
{
    return ScoreResult{score_gold(question, response), std::nullopt, {}};
}

double score_gold(const Question& question, const Response& response)
{
    if (!question.gold_answer || !response.extracted_answer)
        return 0.0;
    // Code answers keep their text, so the gold answer is only trimmed.
    const auto gold = make_answer(*question.gold_answer, question.domain != DomainTag::code);
    return equivalent(gold, *response.extracted_answer) ? 1.0 : 0.0;
}

namespace {

std::optional<double> parse_score(const std::string& out)
{
    std::istringstream lines(out);
    std::string line, last;
    while (std::getline(lines, line)) {
        auto b = line.find_first_not_of(" \t\r");
        if (b != std::string::npos)
            last = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
    }
    if (last.empty())
        return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(last.c_str(), &end);
    if (errno != 0 || end != last.c_str() + last.size() || !(v >= 0.0 && v <= 1.0))
        return std::nullopt;
    return v;
}

std::atomic<std::uint64_t> g_workdir_counter{0};

}  // namespace

ScoreResult score_command(const CommandProfile& profile, const std::string& payload)
{
    if (profile.argv.empty())
        throw Error(ErrorCode::scorer_missing, "command profile has an empty argv");

    fs::path dir;
    bool remove_dir = false;
    if (profile.workdir == CommandProfile::Workdir::fixed) {
        dir = profile.fixed_dir;
        fs::create_directories(dir);
    } else {
        const auto tag = derive_seed(static_cast<std::uint64_t>(::getpid()), {g_workdir_counter.fetch_add(1)});
        dir = fs::temp_directory_path() / ("tts-score-" + std::to_string(tag));
        fs::create_directories(dir);
        remove_dir = true;
    }
    struct Cleanup {
        fs::path dir;
        bool active;
        ~Cleanup()
        {
            std::error_code ec;
            if (active)
                fs::remove_all(dir, ec);
        }
    } cleanup{dir, remove_dir};

    const auto input = dir / "input.txt";
    {
        std::ofstream f(input, std::ios::binary);
        f << payload;
    }

    std::vector<std::string> args;
    for (const auto& a : profile.argv) {
        std::string s = a;
        for (auto pos = s.find("{input_file}"); pos != std::string::npos; pos = s.find("{input_file}", pos))
            s.replace(pos, 12, input.string());
        args.push_back(std::move(s));
    }
    std::vector<char*> cargv;
    for (auto& a : args)
        cargv.push_back(a.data());
    cargv.push_back(nullptr);

    int pipe_fd[2];
    if (::pipe(pipe_fd) != 0)
        throw Error(ErrorCode::storage_io, "pipe failed");
    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(pipe_fd[0]);
        ::close(pipe_fd[1]);
        throw Error(ErrorCode::storage_io, "fork failed");
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(pipe_fd[1], STDOUT_FILENO);
        int devnull = ::open("/dev/null", O_RDWR);
        if (devnull >= 0) {
            ::dup2(devnull, STDIN_FILENO);
            ::dup2(devnull, STDERR_FILENO);
        }
        ::close(pipe_fd[0]);
        ::close(pipe_fd[1]);
        if (::chdir(dir.c_str()) != 0)
            ::_exit(126);
        ::execvp(cargv[0], cargv.data());
        ::_exit(127);
    }
    ::close(pipe_fd[1]);

    std::string out;
    bool timed_out = false;
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(profile.time_limit_s);
    char buf[4096];
    while (true) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            timed_out = true;
            break;
        }
        pollfd pfd{pipe_fd[0], POLLIN, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
        if (ready < 0 && errno != EINTR)
            break;
        if (ready <= 0)
            continue;
        const auto n = ::read(pipe_fd[0], buf, sizeof buf);
        if (n <= 0)
            break;
        out.append(buf, static_cast<std::size_t>(n));
    }
    ::close(pipe_fd[0]);

    int status = 0;
    if (timed_out) {
        ::kill(-pid, SIGKILL);
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        return ScoreResult{0.0, ScoreResult::Failure::command_timeout, "time limit exceeded"};
    }
    // stdout closed; wait for exit within the remaining time.
    while (true) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid)
            break;
        if (r < 0 && errno != EINTR)
            break;
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            return ScoreResult{0.0, ScoreResult::Failure::command_timeout, "time limit exceeded"};
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const auto detail = WIFSIGNALED(status) ? "killed by signal " + std::to_string(WTERMSIG(status))
                                                : "exit status " + std::to_string(WEXITSTATUS(status));
        return ScoreResult{0.0, ScoreResult::Failure::command_crash, detail};
    }
    if (auto v = parse_score(out))
        return ScoreResult{*v, std::nullopt, {}};
    return ScoreResult{0.0, ScoreResult::Failure::unparseable_score, out.substr(0, 256)};
}

CommandVerifier::CommandVerifier(std::optional<CommandProfile> override_profile) : override_(std::move(override_profile))
{
}

ScoreResult CommandVerifier::score(const Question& question, const Response& response) const
{
    const CommandProfile* profile = override_ ? &*override_ : (question.scorer_binding ? &*question.scorer_binding : nullptr);
    if (!profile)
        throw Error(ErrorCode::scorer_missing, "question " + question.id + " has no scorer binding");
    const auto& payload = response.extracted_answer ? response.extracted_answer->raw : response.text;
    return score_command(*profile, payload);
}

QualityVerifier::QualityVerifier(std::map<std::string, double> quality)
{
    for (auto& [k, v] : quality)
        quality_[normalize(k)] = v;
}

ScoreResult QualityVerifier::score(const Question&, const Response& response) const
{
    if (!response.extracted_answer)
        return {};
    auto it = quality_.find(response.extracted_answer->canonical);
    return ScoreResult{it == quality_.end() ? 0.0 : it->second, std::nullopt, {}};
}

Json QualityVerifier::describe() const
{
    Json q = Json::object();
    for (const auto& [k, v] : quality_)
        q[k] = v;
    return Json{{"kind", "quality"}, {"quality", std::move(q)}};
}

std::unique_ptr<Verifier> default_verifier_for(const Question& question)
{
    if (question.gold_answer)
        return std::make_unique<GoldVerifier>();
    if (question.scorer_binding)
        return std::make_unique<CommandVerifier>();
    return nullptr;
}

}  // namespace tts
