// SPDX-License-Identifier: Apache-2.0
#include "tts/policy.hpp"
#include "tts/aggregate.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace tts {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

using Table = std::vector<std::pair<std::string, double>>;

std::vector<std::string> validate_table(const Table& table, const std::string& where)
{
    std::vector<std::string> out;
    if (table.empty()) {
        out.push_back(where + ": answers must be non-empty");
        return out;
    }
    double sum = 0.0;
    for (const auto& [answer, p] : table) {
        if (!(p >= 0.0 && p <= 1.0))
            out.push_back(where + ": probability of '" + answer + "' outside [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        out.push_back(where + ": probabilities sum to " + std::to_string(sum) + ", not 1");
    return out;
}

bool key_matches(std::string_view key, std::string_view canonical)
{
    return key == canonical || normalize(key) == canonical;
}

Json table_to_json(const Table& table)
{
    Json j = Json::object();
    for (const auto& [a, p] : table)
        j[a] = p;
    return j;
}

Table table_from_json(const Json& j)
{
    Table out;
    if (j.is_array()) {
        for (const auto& e : j)
            out.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
        return out;
    }
    for (const auto& [k, v] : j.items())
        out.emplace_back(k, v.get<double>());
    return out;
}

}  // namespace

std::vector<Generation> Policy::generate_batch(const PolicyRequest& request, int count)
{
    std::vector<Generation> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        PolicyRequest sub = request;
        sub.seed = batch_element_seed(request.seed, i);
        try {
            out.push_back(generate(sub));
        } catch (const Error& e) {
            Generation g;
            g.finish_reason = FinishReason::error;
            g.error = e.what();
            out.push_back(std::move(g));
        }
    }
    return out;
}

std::uint64_t batch_element_seed(std::uint64_t request_seed, int index)
{
    return derive_seed(request_seed, {static_cast<std::uint64_t>(index)});
}

bool has_partial_failure(const std::vector<Generation>& batch)
{
    return std::any_of(batch.begin(), batch.end(),
                       [](const Generation& g) { return g.finish_reason == FinishReason::error; });
}

std::int64_t count_tokens(std::string_view text)
{
    std::int64_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

std::string truncate_tokens(std::string_view text, std::int64_t max_tokens)
{
    std::int64_t n = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (is_space(text[i])) {
            if (in_token && n == max_tokens)
                return std::string(text.substr(0, i));
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return std::string(text);
}

// ---------------------------------------------------------------------------

std::string CategoricalPolicySpec::default_body_template()
{
    return "*** Final Answer ***\n{answer}\n*** Reasoning ***\nSampled from the scripted answer table.\n";
}

std::vector<std::string> CategoricalPolicySpec::validate() const
{
    auto out = validate_table(answers, "answers");
    if (body_template.find("{answer}") == std::string::npos)
        out.push_back("body_template lacks the {answer} placeholder");
    return out;
}

double CategoricalPolicySpec::probability_of(std::string_view canonical) const
{
    double p = 0.0;
    for (const auto& [a, q] : answers)
        if (key_matches(a, canonical))
            p += q;
    return p;
}

double CategoricalPolicySpec::quality_of(std::string_view canonical) const
{
    for (const auto& [a, q] : quality)
        if (key_matches(a, canonical))
            return q;
    return 0.0;
}

std::vector<std::string> ConditionedPolicySpec::validate() const
{
    auto out = base.validate();
    if (shift_on_positive)
        for (auto& v : validate_table(*shift_on_positive, "shift_on_positive"))
            out.push_back(std::move(v));
    if (shift_on_negative_warning)
        for (auto& v : validate_table(*shift_on_negative_warning, "shift_on_negative_warning"))
            out.push_back(std::move(v));
    return out;
}

void to_json(Json& j, const CategoricalPolicySpec& v)
{
    j = Json::object();
    j["answers"] = table_to_json(v.answers);
    if (v.body_template != CategoricalPolicySpec::default_body_template())
        j["body_template"] = v.body_template;
    if (!v.quality.empty()) {
        Json q = Json::object();
        for (const auto& [k, x] : v.quality)
            q[k] = x;
        j["quality"] = std::move(q);
    }
}

void from_json(const Json& j, CategoricalPolicySpec& v)
{
    v = CategoricalPolicySpec{};
    v.answers = table_from_json(j.at("answers"));
    if (j.contains("body_template"))
        v.body_template = j.at("body_template").get<std::string>();
    if (j.contains("quality"))
        for (const auto& [k, x] : j.at("quality").items())
            v.quality[k] = x.get<double>();
}

void to_json(Json& j, const ConditionedPolicySpec& v)
{
    j = Json::object();
    j["base"] = v.base;
    if (v.shift_on_positive)
        j["shift_on_positive"] = table_to_json(*v.shift_on_positive);
    if (v.shift_on_negative_warning)
        j["shift_on_negative_warning"] = table_to_json(*v.shift_on_negative_warning);
}

void from_json(const Json& j, ConditionedPolicySpec& v)
{
    v = ConditionedPolicySpec{};
    // A bare categorical spec is accepted as an unconditioned policy.
    v.base = j.contains("base") ? j.at("base").get<CategoricalPolicySpec>() : j.get<CategoricalPolicySpec>();
    if (j.contains("shift_on_positive"))
        v.shift_on_positive = table_from_json(j.at("shift_on_positive"));
    if (j.contains("shift_on_negative_warning"))
        v.shift_on_negative_warning = table_from_json(j.at("shift_on_negative_warning"));
}

// ---------------------------------------------------------------------------

ScriptedPolicy::ScriptedPolicy(CategoricalPolicySpec spec) : ScriptedPolicy(ConditionedPolicySpec{std::move(spec), {}, {}})
{
}

ScriptedPolicy::ScriptedPolicy(ConditionedPolicySpec spec) : spec_(std::move(spec))
{
    auto violations = spec_.validate();
    if (!violations.empty()) {
        std::string msg = "invalid policy spec:";
        for (const auto& v : violations)
            msg += " " + v + ";";
        throw Error(ErrorCode::invalid_spec, msg);
    }
}

const std::vector<std::pair<std::string, double>>& ScriptedPolicy::distribution_for(std::string_view prompt) const
{
    if (spec_.shift_on_positive && prompt.find(kPositiveMarker) != std::string_view::npos)
        return *spec_.shift_on_positive;
    if (spec_.shift_on_negative_warning && prompt.find(kNegativeMarker) != std::string_view::npos)
        return *spec_.shift_on_negative_warning;
    return spec_.base.answers;
}

std::string ScriptedPolicy::sample_answer(std::string_view prompt, std::uint64_t seed) const
{
    const auto& table = distribution_for(prompt);
    std::mt19937_64 rng(derive_seed(seed, {hash_text(prompt)}));
    const double u = uniform01(rng);
    double acc = 0.0;
    for (const auto& [answer, p] : table) {
        acc += p;
        if (u < acc)
            return answer;
    }
    // Rounding slack: fall back to the last answer with positive mass.
    for (auto it = table.rbegin(); it != table.rend(); ++it)
        if (it->second > 0.0)
            return it->first;
    return table.back().first;
}

Generation ScriptedPolicy::generate(const PolicyRequest& request)
{
    if (request.max_tokens < 1)
        throw Error(ErrorCode::invalid_config, "max_tokens must be at least 1");
    const auto answer = sample_answer(request.prompt, request.seed);
    const auto text = render_template(spec_.base.body_template, {{"answer", answer}});
    Generation g;
    const auto tokens = count_tokens(text);
    if (tokens > request.max_tokens) {
        g.text = truncate_tokens(text, request.max_tokens);
        g.tokens_generated = request.max_tokens;
        g.finish_reason = FinishReason::length;
    } else {
        g.text = text;
        g.tokens_generated = tokens;
    }
    return g;
}

Json ScriptedPolicy::describe() const { return Json{{"backend", "scripted"}, {"spec", spec_}}; }

// ---------------------------------------------------------------------------

OracleJudgePolicy::OracleJudgePolicy(std::map<std::string, double> quality, PromptRegistry prompts)
    : quality_(std::move(quality)), prompts_(std::move(prompts))
{
}

Generation OracleJudgePolicy::generate(const PolicyRequest& request)
{
    const std::string_view prompt = request.prompt;

    // Find the selection profile whose labels occur in the prompt.
    struct Split {
        int index_base = 0;
        std::vector<std::string_view> bodies;
        std::string suffix;
    };
    std::optional<Split> best;
    for (const char* name : {"math", "code"}) {
        const SelectionProfile* profile = nullptr;
        try {
            profile = &prompts_.selection(name);
        } catch (const Error&) {
            continue;
        }
        std::vector<std::pair<std::size_t, std::size_t>> labels;  // (start, end)
        std::size_t from = 0;
        for (int i = 0;; ++i) {
            auto label = render_template(profile->candidate_label, {{"index", std::to_string(i + profile->index_base)}});
            auto pos = prompt.find(label, from);
            if (pos == std::string_view::npos)
                break;
            labels.emplace_back(pos, pos + label.size());
            from = pos + label.size();
        }
        if (labels.empty() || (best && best->bodies.size() >= labels.size()))
            continue;
        Split s;
        s.index_base = profile->index_base;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto end = i + 1 < labels.size() ? labels[i + 1].first : prompt.size();
            s.bodies.push_back(prompt.substr(labels[i].second, end - labels[i].second));
        }
        const auto& tmpl = prompts_.has(profile->question_key) ? prompts_.get(profile->question_key) : std::string{};
        if (auto at = tmpl.find("{results}"); at != std::string::npos)
            s.suffix = tmpl.substr(at + 9);
        best = std::move(s);
    }

    Generation g;
    if (!best) {
        g.text = "No candidates found.";
        g.tokens_generated = count_tokens(g.text);
        return g;
    }
    auto& bodies = best->bodies;
    if (!best->suffix.empty() && bodies.back().size() >= best->suffix.size() &&
        bodies.back().substr(bodies.back().size() - best->suffix.size()) == best->suffix)
        bodies.back().remove_suffix(best->suffix.size());

    int best_index = 0;
    double best_quality = -2.0;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        double q = -1.0;
        for (DomainTag tag : {DomainTag::math, DomainTag::physics, DomainTag::code}) {
            std::optional<Answer> answer;
            try {
                answer = extract_answer(bodies[i], prompts_.extraction(prompts_.domain(tag).extraction));
            } catch (const Error&) {
                continue;
            }
            if (!answer)
                continue;
            q = 0.0;
            for (const auto& [key, value] : quality_)
                if (key_matches(key, answer->canonical))
                    q = value;
            break;
        }
        if (q > best_quality) {
            best_quality = q;
            best_index = static_cast<int>(i);
        }
    }
    g.text = std::to_string(best_index + best->index_base);
    g.tokens_generated = 1;
    return g;
}

Json OracleJudgePolicy::describe() const
{
    Json q = Json::object();
    for (const auto& [k, v] : quality_)
        q[k] = v;
    return Json{{"backend", "oracle_judge"}, {"quality", std::move(q)}};
}

// ---------------------------------------------------------------------------

CannedPolicy::CannedPolicy(std::vector<std::string> replies) : replies_(std::move(replies))
{
    if (replies_.empty())
        throw Error(ErrorCode::invalid_spec, "canned policy needs at least one reply");
}

Generation CannedPolicy::generate(const PolicyRequest& request)
{
    std::string text;
    {
        std::lock_guard lock(mu_);
        text = replies_[static_cast<std::size_t>(calls_) % replies_.size()];
        ++calls_;
    }
    // Reserved replies simulate provider failures.
    if (text == "<unreachable>")
        throw Error(ErrorCode::provider_unreachable, "canned provider unreachable");
    if (text == "<rejected>")
        throw Error(ErrorCode::provider_rejected, "canned provider rejected the request");
    Generation g;
    const auto tokens = count_tokens(text);
    if (tokens > request.max_tokens) {
        g.text = truncate_tokens(text, request.max_tokens);
        g.tokens_generated = request.max_tokens;
        g.finish_reason = FinishReason::length;
    } else {
        g.text = std::move(text);
        g.tokens_generated = tokens;
    }
    return g;
}

Json CannedPolicy::describe() const { return Json{{"backend", "canned"}, {"replies", replies_}}; }

int CannedPolicy::calls() const
{
    std::lock_guard lock(mu_);
    return calls_;
}

}  // namespace tts
