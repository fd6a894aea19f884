// SPDX-License-Identifier: Apache-2.0
#include "tts/aggregate.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace tts {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

std::string_view trim_view(std::string_view s)
{
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p)
{
    return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

std::string collapse_whitespace(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char c : s) {
        if (is_space(c)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty())
            out += ' ';
        in_space = false;
        out += c;
    }
    return out;
}

// Runs of two or more letters not introduced by a backslash are words;
// single letters are treated as math variables and keep their case.
std::string lowercase_words(std::string_view s)
{
    std::string out(s);
    std::size_t i = 0;
    while (i < out.size()) {
        if (!is_alpha(out[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < out.size() && is_alpha(out[j]))
            ++j;
        const bool command = i > 0 && out[i - 1] == '\\';
        if (j - i >= 2 && !command)
            for (std::size_t k = i; k < j; ++k)
                out[k] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[k])));
        i = j;
    }
    return out;
}

// Index of the brace closing the one at `open`, or npos.
std::size_t matching_brace(std::string_view s, std::size_t open)
{
    int depth = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        if (s[i] == '{')
            ++depth;
        else if (s[i] == '}' && --depth == 0)
            return i;
    }
    return std::string_view::npos;
}

std::optional<std::string_view> strip_one_markup(std::string_view s)
{
    static constexpr std::pair<std::string_view, std::string_view> kPairs[] = {
        {"$$", "$$"}, {"\\(", "\\)"}, {"\\[", "\\]"}, {"**", "**"}, {"$", "$"}, {"`", "`"},
    };
    for (const auto& [open, close] : kPairs)
        if (s.size() >= open.size() + close.size() + 1 && starts_with(s, open) && ends_with(s, close))
            return s.substr(open.size(), s.size() - open.size() - close.size());
    for (std::string_view cmd : {"\\boxed{", "\\fbox{", "\\text{", "\\mathrm{"}) {
        if (starts_with(s, cmd) && matching_brace(s, cmd.size() - 1) == s.size() - 1)
            return s.substr(cmd.size(), s.size() - cmd.size() - 1);
    }
    return std::nullopt;
}

std::string strip_markup(std::string_view s)
{
    std::string_view cur = s;
    while (auto inner = strip_one_markup(cur))
        cur = trim_view(*inner);
    return std::string(cur);
}

// Strict decimal grammar: [+-]? (digits [. digits?] | . digits) ([eE][+-]?digits)?
std::optional<double> parse_decimal(std::string_view s)
{
    std::size_t i = 0;
    if (i < s.size() && (s[i] == '+' || s[i] == '-'))
        ++i;
    std::size_t int_digits = 0, frac_digits = 0;
    while (i < s.size() && is_digit(s[i]))
        ++i, ++int_digits;
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && is_digit(s[i]))
            ++i, ++frac_digits;
    }
    if (int_digits + frac_digits == 0)
        return std::nullopt;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        ++i;
        if (i < s.size() && (s[i] == '+' || s[i] == '-'))
            ++i;
        std::size_t exp_digits = 0;
        while (i < s.size() && is_digit(s[i]))
            ++i, ++exp_digits;
        if (exp_digits == 0)
            return std::nullopt;
    }
    if (i != s.size())
        return std::nullopt;
    std::string_view body = s;
    if (body.front() == '+')
        body.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc{} || ptr != body.data() + body.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

std::optional<double> parse_numeric(std::string_view text)
{
    std::string compact;
    for (char c : text)
        if (!is_space(c))
            compact += c;
    std::string_view s = compact;
    if (s.empty())
        return std::nullopt;

    if (auto v = parse_decimal(s))
        return v;

    if (ends_with(s, "\\%") || ends_with(s, "%")) {
        auto body = s.substr(0, s.size() - (ends_with(s, "\\%") ? 2 : 1));
        if (auto v = parse_decimal(body))
            return *v / 100.0;
        return std::nullopt;
    }

    double sign = 1.0;
    std::string_view rest = s;
    if (!rest.empty() && rest.front() == '-') {
        sign = -1.0;
        rest.remove_prefix(1);
    }
    for (std::string_view cmd : {"\\frac{", "\\dfrac{", "\\tfrac{"}) {
        if (!starts_with(rest, cmd))
            continue;
        const auto num_close = matching_brace(rest, cmd.size() - 1);
        if (num_close == std::string_view::npos || num_close + 1 >= rest.size() || rest[num_close + 1] != '{')
            return std::nullopt;
        const auto den_close = matching_brace(rest, num_close + 1);
        if (den_close != rest.size() - 1)
            return std::nullopt;
        auto num = parse_decimal(rest.substr(cmd.size(), num_close - cmd.size()));
        auto den = parse_decimal(rest.substr(num_close + 2, den_close - num_close - 2));
        if (!num || !den || *den == 0.0)
            return std::nullopt;
        return sign * *num / *den;
    }

    if (auto slash = s.find('/'); slash != std::string_view::npos && s.find('/', slash + 1) == std::string_view::npos) {
        auto num = parse_decimal(s.substr(0, slash));
        auto den = parse_decimal(s.substr(slash + 1));
        if (num && den && *den != 0.0)
            return *num / *den;
    }
    return std::nullopt;
}

std::string format_numeric(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    std::string out(buf);
    if (out == "-0")
        out = "0";
    return out;
}

// Splits at commas that are not nested inside (), [] or {}.
std::vector<std::string_view> split_top_level(std::string_view s)
{
    std::vector<std::string_view> parts;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '(' || c == '[' || c == '{')
            ++depth;
        else if (c == ')' || c == ']' || c == '}')
            --depth;
        else if (c == ',' && depth == 0) {
            parts.push_back(trim_view(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    parts.push_back(trim_view(s.substr(start)));
    return parts;
}

std::optional<std::string> reorder_set(std::string_view s)
{
    std::string_view inner;
    if (starts_with(s, "\\{") && ends_with(s, "\\}") && s.size() >= 4)
        inner = s.substr(2, s.size() - 4);
    else if (starts_with(s, "{") && matching_brace(s, 0) == s.size() - 1)
        inner = s.substr(1, s.size() - 2);
    else
        return std::nullopt;
    inner = trim_view(inner);
    if (inner.empty() || inner.find('|') != std::string_view::npos || inner.find(':') != std::string_view::npos)
        return std::nullopt;

    struct Element {
        std::string text;
        std::optional<double> value;
    };
    std::vector<Element> elems;
    for (auto part : split_top_level(inner)) {
        if (part.empty())
            return std::nullopt;
        auto value = parse_numeric(part);
        elems.push_back({value ? format_numeric(*value) : std::string(part), value});
    }
    const bool all_numeric = std::all_of(elems.begin(), elems.end(), [](const Element& e) { return e.value; });
    std::sort(elems.begin(), elems.end(), [all_numeric](const Element& a, const Element& b) {
        if (all_numeric && *a.value != *b.value)
            return *a.value < *b.value;
        return a.text < b.text;
    });
    elems.erase(std::unique(elems.begin(), elems.end(),
                            [](const Element& a, const Element& b) { return a.text == b.text; }),
                elems.end());
    std::string out = "{";
    for (std::size_t i = 0; i < elems.size(); ++i) {
        if (i)
            out += ',';
        out += elems[i].text;
    }
    out += '}';
    return out;
}

std::optional<Answer> extract_section(std::string_view text, std::string_view marker)
{
    auto pos = text.find(marker);
    if (pos == std::string_view::npos)
        return std::nullopt;
    auto body = text.substr(pos + marker.size());
    // The section runs until the next line opening with "***".
    std::size_t end = body.size();
    std::size_t line = 0;
    while (line < body.size()) {
        auto nl = body.find('\n', line);
        if (nl == std::string_view::npos)
            break;
        auto next = nl + 1;
        auto rest = body.substr(next);
        auto lead = rest.find_first_not_of(" \t");
        if (lead != std::string_view::npos && rest.substr(lead, 3) == "***") {
            end = next;
            break;
        }
        line = next;
    }
    auto raw = trim_view(body.substr(0, end));
    if (raw.empty())
        return std::nullopt;
    return Answer{std::string(raw), {}, {}};
}

std::optional<Answer> extract_fenced(std::string_view text)
{
    std::optional<std::string_view> last;
    std::size_t pos = 0;
    while (true) {
        auto open = text.find("```", pos);
        if (open == std::string_view::npos)
            break;
        auto line_end = text.find('\n', open + 3);
        if (line_end == std::string_view::npos)
            break;
        auto close = text.find("```", line_end + 1);
        if (close == std::string_view::npos)
            break;
        last = text.substr(line_end + 1, close - line_end - 1);
        pos = close + 3;
    }
    if (!last)
        return std::nullopt;
    auto raw = *last;
    while (!raw.empty() && (raw.back() == '\n' || raw.back() == '\r'))
        raw.remove_suffix(1);
    if (trim_view(raw).empty())
        return std::nullopt;
    return Answer{std::string(raw), {}, {}};
}

}  // namespace

std::optional<Answer> extract_answer(std::string_view text, const ExtractionProfile& profile)
{
    std::optional<Answer> found = profile.kind == ExtractionProfile::Kind::section ? extract_section(text, profile.marker)
                                                                                   : extract_fenced(text);
    if (!found)
        return std::nullopt;
    return make_answer(std::move(found->raw), profile.normalize);
}

std::string normalize(std::string_view raw, std::vector<std::string>* trace)
{
    auto note = [trace](const char* rule, const std::string& before, const std::string& after) {
        if (trace && before != after)
            trace->emplace_back(rule);
    };
    std::string s(raw);
    std::string next = std::string(trim_view(s));
    note("trim", s, next);
    s = std::move(next);

    next = collapse_whitespace(s);
    note("collapse_whitespace", s, next);
    s = std::move(next);

    next = lowercase_words(s);
    note("lowercase_words", s, next);
    s = std::move(next);

    next = strip_markup(s);
    note("strip_markup", s, next);
    s = std::move(next);

    if (auto v = parse_numeric(s)) {
        next = format_numeric(*v);
        note("numeric", s, next);
        s = std::move(next);
    } else if (auto set = reorder_set(s)) {
        note("set_reorder", s, *set);
        s = std::move(*set);
    }
    return s;
}

Answer make_answer(std::string raw, bool apply_normalization)
{
    Answer a;
    if (apply_normalization) {
        a.canonical = normalize(raw, &a.normalization_trace);
    } else {
        a.canonical = std::string(trim_view(raw));
        if (a.canonical != raw)
            a.normalization_trace.emplace_back("trim");
    }
    a.raw = std::move(raw);
    return a;
}

bool equivalent(const Answer& a, const Answer& b) { return a.canonical == b.canonical; }

EquivalenceVerdict equivalent_llm(const Answer& a, const Answer& b, Policy& policy, const PromptRegistry& prompts,
                                  std::uint64_t seed)
{
    if (equivalent(a, b))
        return {true, EquivalenceVerdict::Provenance::rule_based, {}};

    PolicyRequest req;
    req.system_prompt = prompts.get("equivalence.system");
    req.prompt = render_template(prompts.get("equivalence.question"), {{"answers", Json::array({a.raw, b.raw}).dump()}});
    req.max_tokens = 256;
    req.temperature = 0.0;
    req.seed = seed;
    Generation g;
    try {
        g = policy.generate(req);
    } catch (const Error& e) {
        throw Error(ErrorCode::llm_unavailable, std::string("equivalence query failed: ") + e.what());
    }
    const auto reply = trim_view(g.text);
    if (g.finish_reason == FinishReason::error || reply.empty())
        throw Error(ErrorCode::llm_unavailable, "equivalence query returned no usable text");
    const auto modes = split_top_level(reply);
    return {modes.size() == 1, EquivalenceVerdict::Provenance::llm, std::string(reply)};
}

AggregationOutcome majority_vote(std::span<const Response> responses)
{
    struct Bucket {
        std::string canonical;
        int count = 0;
        std::size_t first = 0;
    };
    std::vector<Bucket> buckets;
    int abstentions = 0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto& ans = responses[i].extracted_answer;
        if (!ans) {
            ++abstentions;
            continue;
        }
        auto it = std::find_if(buckets.begin(), buckets.end(),
                               [&](const Bucket& b) { return b.canonical == ans->canonical; });
        if (it == buckets.end())
            buckets.push_back({ans->canonical, 1, i});
        else
            ++it->count;
    }
    if (buckets.empty())
        throw Error(ErrorCode::no_extractable_answers, "no response carries an extractable answer");

    // Buckets are in first-occurrence order, so the first maximum wins ties.
    const Bucket* best = &buckets.front();
    for (const auto& b : buckets)
        if (b.count > best->count)
            best = &b;

    AggregationOutcome out;
    out.kind = AggregationKind::vote;
    out.selected_id = responses[best->first].id;
    std::vector<TallyEntry> tallies;
    tallies.reserve(buckets.size());
    for (const auto& b : buckets)
        tallies.push_back({b.canonical, b.count});
    out.tallies = std::move(tallies);
    out.abstentions = abstentions;
    return out;
}

AggregationOutcome scoring_bon(const Question& question, std::span<const Response> responses, const Verifier& scorer)
{
    if (responses.empty())
        throw Error(ErrorCode::invalid_state, "scoring_bon needs at least one response");
    AggregationOutcome out;
    out.kind = AggregationKind::bon_scoring;
    std::size_t best = 0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        double s = 0.0;
        if (responses[i].finish_reason != FinishReason::error) {
            auto result = scorer.score(question, responses[i]);
            if (result.failure)
                out.scorer_failures.push_back(responses[i].id);
            else
                s = std::clamp(result.score, 0.0, 1.0);
        }
        out.scores.push_back(s);
        if (s > out.scores[best])
            best = i;
    }
    out.selected_id = responses[best].id;
    return out;
}

std::optional<int> parse_judge_index(std::string_view reply, int candidates, int index_base)
{
    std::optional<long long> found;
    int integers = 0;
    std::size_t i = 0;
    while (i < reply.size()) {
        if (!is_digit(reply[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < reply.size() && is_digit(reply[j]))
            ++j;
        const bool negative = i > 0 && reply[i - 1] == '-';
        long long v = 0;
        auto [ptr, ec] = std::from_chars(reply.data() + i, reply.data() + j, v);
        ++integers;
        if (ec == std::errc{} && ptr == reply.data() + j)
            found = negative ? -v : v;
        else
            found.reset();
        i = j;
    }
    if (integers != 1 || !found)
        return std::nullopt;
    const long long index = *found - index_base;
    if (index < 0 || index >= candidates)
        return std::nullopt;
    return static_cast<int>(index);
}

std::string render_selection_prompt(const Question& question, std::span<const Response> responses,
                                    const SelectionProfile& profile, const PromptRegistry& prompts)
{
    std::string results;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        results += render_template(profile.candidate_label,
                                   {{"index", std::to_string(static_cast<int>(i) + profile.index_base)}});
        results += '\n';
        results += responses[i].text;
        results += "\n\n";
    }
    return render_template(prompts.get(profile.question_key),
                           {{"problem_statement", question.prompt}, {"results", results}});
}

AggregationOutcome llm_bon(const Question& question, std::span<const Response> responses, Policy& judge,
                           const SelectionProfile& profile, const PromptRegistry& prompts,
                           const JudgeQueryOptions& options)
{
    if (responses.empty())
        throw Error(ErrorCode::invalid_state, "llm_bon needs at least one response");
    AggregationOutcome out;
    out.kind = AggregationKind::bon_llm;
    out.selected_id = responses.front().id;
    if (responses.size() == 1)
        return out;

    PolicyRequest req;
    req.system_prompt = prompts.get(profile.system_key);
    req.prompt = render_selection_prompt(question, responses, profile, prompts);
    req.max_tokens = options.max_tokens;
    req.temperature = options.temperature;

    const auto started = std::chrono::steady_clock::now();
    std::optional<int> picked;
    for (int attempt = 0; attempt < options.max_attempts && !picked; ++attempt) {
        req.seed = derive_seed(options.seed, {static_cast<std::uint64_t>(attempt)});
        ++out.judge_queries;
        try {
            auto g = judge.generate(req);
            out.judge_tokens += g.tokens_generated;
            picked = parse_judge_index(g.text, static_cast<int>(responses.size()), profile.index_base);
        } catch (const Error&) {
            // counts as an unparseable attempt
        }
    }
    out.judge_latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (picked) {
        out.selected_id = responses[*picked].id;
    } else {
        out.fallback = true;
    }
    return out;
}

AggregationOutcome vote_then_bon(const Question& question, std::span<const Response> responses, Policy& judge,
                                 const SelectionProfile& profile, const PromptRegistry& prompts,
                                 const JudgeQueryOptions& options)
{
    auto vote = majority_vote(responses);
    const auto winner = std::find_if(responses.begin(), responses.end(),
                                     [&](const Response& r) { return r.id == vote.selected_id; });
    if (winner == responses.end() || !winner->extracted_answer) {
        vote.kind = AggregationKind::vote_then_bon;
        return vote;
    }
    const auto modal = winner->extracted_answer->canonical;

    std::vector<Response> subset;
    for (const auto& r : responses)
        if (r.extracted_answer && r.extracted_answer->canonical == modal)
            subset.push_back(r);

    auto bon = llm_bon(question, subset, judge, profile, prompts, options);
    AggregationOutcome out = std::move(vote);
    out.kind = AggregationKind::vote_then_bon;
    out.selected_id = bon.selected_id;
    out.fallback = bon.fallback;
    out.judge_tokens = bon.judge_tokens;
    out.judge_queries = bon.judge_queries;
    out.judge_latency_ms = bon.judge_latency_ms;
    return out;
}

}  // namespace tts
