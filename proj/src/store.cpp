// SPDX-License-Identifier: Apache-2.0
#include "tts/store.hpp"
#include "tts/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace tts {

namespace fs = std::filesystem;

Json to_json(const StoredEvent& e)
{
    return Json{{"schema_version", e.schema_version}, {"seq", e.seq}, {"ts", e.ts}, {"type", e.type}, {"payload", e.payload}};
}

Json to_json(const RunSummary& s)
{
    return Json{{"run_id", s.run_id},
                {"question_id", s.question_id},
                {"strategy", to_string(s.strategy)},
                {"status", to_string(s.status)},
                {"created_at", s.created_at},
                {"total_tokens_generated", s.total_tokens_generated}};
}

bool valid_run_id(std::string_view id)
{
    if (id.empty() || id.size() > 200 || id == "." || id == "..")
        return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' ||
               c == '-';
    });
}

namespace {

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::storage_io, "cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_all(int fd, const std::string& data, const fs::path& p)
{
    std::size_t off = 0;
    while (off < data.size()) {
        const auto n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw Error(ErrorCode::storage_io, "write to " + p.string() + " failed: " + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

}  // namespace

EventStore::EventStore(fs::path root, bool durable) : root_(std::move(root)), durable_(durable)
{
    std::error_code ec;
    fs::create_directories(root_ / "runs", ec);
    if (ec)
        throw Error(ErrorCode::storage_io, "cannot create " + (root_ / "runs").string() + ": " + ec.message());
}

fs::path EventStore::log_path(const std::string& run_id) const
{
    if (!valid_run_id(run_id))
        throw Error(ErrorCode::not_found, "invalid run id '" + run_id + "'");
    return root_ / "runs" / (run_id + ".jsonl");
}

bool EventStore::exists(const std::string& run_id) const
{
    return valid_run_id(run_id) && fs::exists(log_path(run_id));
}

// Cuts a torn final line and returns the last durable sequence number.
std::int64_t EventStore::recover_tail(const std::string& run_id)
{
    const auto path = log_path(run_id);
    auto data = read_file(path);
    const auto last_nl = data.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != data.size()) {
        std::error_code ec;
        fs::resize_file(path, keep, ec);
        if (ec)
            throw Error(ErrorCode::storage_io, "cannot truncate torn tail of " + path.string());
    }
    auto events = read_events(run_id, 0);
    return events.empty() ? 0 : events.back().seq;
}

std::int64_t EventStore::append(const std::string& run_id, std::string_view type, const Json& payload)
{
    const auto path = log_path(run_id);
    std::lock_guard lock(mu_);
    std::int64_t last = 0;
    if (type == event::run_created) {
        if (fs::exists(path))
            throw Error(ErrorCode::storage_io, "run " + run_id + " already exists");
    } else {
        if (!fs::exists(path))
            throw Error(ErrorCode::not_found, "unknown run " + run_id);
        auto it = last_seq_.find(run_id);
        last = it != last_seq_.end() ? it->second : recover_tail(run_id);
    }
    StoredEvent e;
    e.seq = last + 1;
    e.ts = utc_now_rfc3339();
    e.type = std::string(type);
    e.payload = payload;
    const auto line = to_json(e).dump() + "\n";

    const int flags = O_WRONLY | O_APPEND | O_CREAT | (type == event::run_created ? O_EXCL : 0);
    const int fd = ::open(path.c_str(), flags, 0644);
    if (fd < 0)
        throw Error(ErrorCode::storage_io, "cannot open " + path.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, line, path);
        if (durable_ && ::fsync(fd) != 0)
            throw Error(ErrorCode::storage_io, "fsync " + path.string() + " failed");
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::close(fd);
    last_seq_[run_id] = e.seq;
    appended_.notify_all();
    return e.seq;
}

std::vector<StoredEvent> EventStore::read_events(const std::string& run_id, std::int64_t from_seq) const
{
    const auto path = log_path(run_id);
    if (!fs::exists(path))
        throw Error(ErrorCode::not_found, "unknown run " + run_id);
    const auto data = read_file(path);
    std::vector<StoredEvent> out;
    std::int64_t expected = 1;
    std::size_t pos = 0;
    while (pos < data.size()) {
        auto nl = data.find('\n', pos);
        const bool torn = nl == std::string::npos;
        const auto line = std::string_view(data).substr(pos, torn ? std::string::npos : nl - pos);
        pos = torn ? data.size() : nl + 1;
        if (line.empty())
            continue;
        StoredEvent e;
        try {
            const auto j = Json::parse(line);
            e.schema_version = j.at("schema_version").get<int>();
            e.seq = j.at("seq").get<std::int64_t>();
            e.ts = j.at("ts").get<std::string>();
            e.type = j.at("type").get<std::string>();
            e.payload = j.at("payload");
        } catch (const nlohmann::json::exception&) {
            if (torn)
                break;
            throw Error(ErrorCode::corrupt_log, "run " + run_id + ": unreadable event at seq " + std::to_string(expected));
        }
        if (e.schema_version > kEventSchemaVersion)
            throw Error(ErrorCode::corrupt_log, "run " + run_id + ": unsupported schema_version " +
                                                    std::to_string(e.schema_version) + " at seq " + std::to_string(e.seq));
        if (e.seq != expected)
            throw Error(ErrorCode::corrupt_log,
                        "run " + run_id + ": expected seq " + std::to_string(expected) + ", found " + std::to_string(e.seq));
        ++expected;
        if (e.seq > from_seq)
            out.push_back(std::move(e));
    }
    return out;
}

RunRecord EventStore::load_run(const std::string& run_id) const
{
    RunRecord record;
    for (const auto& e : read_events(run_id, 0)) {
        try {
            apply_event(record, e.type, e.payload);
        } catch (const Error& err) {
            throw Error(ErrorCode::corrupt_log,
                        "run " + run_id + ": event seq " + std::to_string(e.seq) + " rejected: " + err.what());
        }
    }
    if (record.run_id.empty())
        throw Error(ErrorCode::corrupt_log, "run " + run_id + ": log has no run_created event");
    return record;
}

Json EventStore::creation_payload(const std::string& run_id) const
{
    auto events = read_events(run_id, 0);
    if (events.empty() || events.front().type != event::run_created)
        throw Error(ErrorCode::corrupt_log, "run " + run_id + ": log does not start with run_created");
    return events.front().payload;
}

std::vector<RunSummary> EventStore::list_runs(const RunFilter& filter) const
{
    std::vector<RunSummary> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_ / "runs", ec)) {
        if (entry.path().extension() != ".jsonl")
            continue;
        const auto run_id = entry.path().stem().string();
        if (!valid_run_id(run_id))
            continue;
        RunSummary s;
        try {
            auto events = read_events(run_id, 0);
            if (events.empty())
                continue;
            RunRecord record;
            for (const auto& e : events)
                apply_event(record, e.type, e.payload);
            s.run_id = record.run_id;
            s.question_id = record.question_id;
            s.strategy = record.config.strategy;
            s.status = record.status;
            s.created_at = events.front().ts;
            s.total_tokens_generated = record.total_tokens_generated;
        } catch (const Error&) {
            continue;  // unreadable logs are reported by load_run, not listed
        }
        if (filter.status && s.status != *filter.status)
            continue;
        if (filter.strategy && s.strategy != *filter.strategy)
            continue;
        if (filter.question_id && s.question_id != *filter.question_id)
            continue;
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const RunSummary& a, const RunSummary& b) {
        if (a.created_at != b.created_at)
            return a.created_at > b.created_at;
        return a.run_id > b.run_id;
    });
    return out;
}

bool EventStore::wait_for_events(const std::string& run_id, std::int64_t after_seq, std::chrono::milliseconds timeout) const
{
    std::unique_lock lock(mu_);
    auto ready = [&] {
        auto it = last_seq_.find(run_id);
        if (it != last_seq_.end())
            return it->second > after_seq;
        return false;
    };
    if (appended_.wait_for(lock, timeout, ready))
        return true;
    lock.unlock();
    // Runs appended by another process are not in the cache.
    auto events = read_events(run_id, after_seq);
    return !events.empty();
}

}  // namespace tts
