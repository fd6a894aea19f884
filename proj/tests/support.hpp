// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit suites.
#pragma once

#include "tts/engine.hpp"
#include "tts/store.hpp"

#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tts::testing {

inline Question math_question(std::string gold = "4", std::string id = "q")
{
    Question q;
    q.id = std::move(id);
    q.prompt = "What is 2 + 2?";
    q.domain = DomainTag::math;
    q.gold_answer = std::move(gold);
    return q;
}

inline CategoricalPolicySpec spec_of(std::vector<std::pair<std::string, double>> answers)
{
    CategoricalPolicySpec spec;
    spec.answers = std::move(answers);
    return spec;
}

/// Response whose text carries `answer` in the math final-answer section.
inline Response answer_response(int batch_index, const std::string& answer, int turn = 1)
{
    Response r;
    r.id = response_id(turn, batch_index);
    r.question_id = "q";
    r.turn_index = turn;
    r.batch_index = batch_index;
    r.text = "*** Final Answer ***\n" + answer + "\n*** Reasoning ***\nbecause\n";
    r.extracted_answer = make_answer(answer);
    r.tokens_generated = 6;
    return r;
}

inline std::vector<Response> answer_responses(const std::vector<std::string>& answers)
{
    std::vector<Response> out;
    for (std::size_t i = 0; i < answers.size(); ++i)
        out.push_back(answer_response(static_cast<int>(i), answers[i]));
    return out;
}

class MemorySink final : public EventSink {
public:
    std::int64_t append(const std::string& run_id, std::string_view type, const Json& payload) override
    {
        std::lock_guard lock(mu_);
        events_[run_id].emplace_back(std::string(type), payload);
        return static_cast<std::int64_t>(events_[run_id].size());
    }

    std::vector<std::pair<std::string, Json>> events(const std::string& run_id) const
    {
        std::lock_guard lock(mu_);
        auto it = events_.find(run_id);
        return it == events_.end() ? std::vector<std::pair<std::string, Json>>{} : it->second;
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::vector<std::pair<std::string, Json>>> events_;
};

/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::mt19937_64 rng{std::random_device{}()};
        path_ = std::filesystem::temp_directory_path() / ("tts-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace tts::testing
