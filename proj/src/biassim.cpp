// SPDX-License-Identifier: Apache-2.0
#include "tts/biassim.hpp"
#include "tts/aggregate.hpp"
#include "tts/error.hpp"
#include "tts/seeding.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

namespace tts {

VoteModel make_vote_model(const CategoricalPolicySpec& spec, std::string_view correct)
{
    auto violations = spec.validate();
    if (!violations.empty())
        throw Error(ErrorCode::invalid_spec, violations.front());
    VoteModel m;
    const auto correct_canonical = normalize(correct);
    for (const auto& [answer, p] : spec.answers) {
        if (p <= 0.0)
            continue;
        const auto canonical = normalize(answer);
        auto it = std::find(m.answers.begin(), m.answers.end(), canonical);
        if (it == m.answers.end()) {
            m.answers.push_back(canonical);
            m.probabilities.push_back(p);
        } else {
            m.probabilities[static_cast<std::size_t>(it - m.answers.begin())] += p;
        }
    }
    for (std::size_t i = 0; i < m.answers.size(); ++i)
        if (m.answers[i] == correct_canonical)
            m.correct = static_cast<int>(i);
    return m;
}

double composition_count(int k, int batch)
{
    if (k <= 1)
        return 1.0;
    double c = 1.0;
    for (int i = 1; i < k; ++i)
        c = c * (batch + i) / i;
    return c;
}

namespace {

struct ExactProblem {
    int batch = 0;
    int k = 0;
    std::vector<double> log_p;     // correct answer first
    std::vector<double> log_fact;  // log n!
};

ExactProblem prepare_exact(const CategoricalPolicySpec& spec, std::string_view correct, int batch, bool& trivial,
                           double& trivial_value)
{
    if (batch < 1)
        throw Error(ErrorCode::invalid_config, "B must be at least 1");
    const auto model = make_vote_model(spec, correct);
    trivial = false;
    if (model.correct < 0) {
        trivial = true;
        trivial_value = 0.0;
        return {};
    }
    ExactProblem pr;
    pr.batch = batch;
    pr.k = static_cast<int>(model.answers.size());
    if (composition_count(pr.k, batch) > kMaxExactCompositions)
        throw Error(ErrorCode::instance_too_large,
                    "exact enumeration needs " + std::to_string(composition_count(pr.k, batch)) + " compositions");
    pr.log_p.push_back(std::log(model.probabilities[static_cast<std::size_t>(model.correct)]));
    for (int i = 0; i < pr.k; ++i)
        if (i != model.correct)
            pr.log_p.push_back(std::log(model.probabilities[static_cast<std::size_t>(i)]));
    pr.log_fact.resize(static_cast<std::size_t>(batch) + 1);
    for (int n = 0; n <= batch; ++n)
        pr.log_fact[static_cast<std::size_t>(n)] = std::lgamma(n + 1.0);
    if (pr.k == 1) {
        trivial = true;
        trivial_value = 1.0;
    }
    return pr;
}

// Sums, over count vectors of the answers j..k-1 using `remaining` draws, the
// probability mass of the correct answer (count n0) winning.
double enumerate(const ExactProblem& pr, int j, int remaining, double log_acc, int n0, int maxc, int nmax)
{
    const auto lp = pr.log_p[static_cast<std::size_t>(j)];
    const auto& lf = pr.log_fact;
    if (j == pr.k - 1) {
        const int n = remaining;
        if (n > maxc)
            return 0.0;  // the correct answer is no longer modal
        const int ties = n == maxc ? nmax + 1 : nmax;
        return std::exp(log_acc - lf[static_cast<std::size_t>(n)] + n * lp) / ties;
    }
    double sum = 0.0;
    for (int n = 0; n <= remaining; ++n) {
        if (n > n0)
            break;  // any count above the correct one loses
        const int m = std::max(maxc, n);
        const int c = n == maxc ? nmax + 1 : nmax;
        sum += enumerate(pr, j + 1, remaining - n, log_acc - lf[static_cast<std::size_t>(n)] + n * lp, n0, m, c);
    }
    return sum;
}

double partial_for_correct_count(const ExactProblem& pr, int n0)
{
    const double log_acc = pr.log_fact[static_cast<std::size_t>(pr.batch)] - pr.log_fact[static_cast<std::size_t>(n0)] +
                           n0 * pr.log_p[0];
    return enumerate(pr, 1, pr.batch - n0, log_acc, n0, n0, 1);
}

}  // namespace

double exact_vote_accuracy(const CategoricalPolicySpec& spec, std::string_view correct, int batch)
{
    bool trivial = false;
    double value = 0.0;
    const auto pr = prepare_exact(spec, correct, batch, trivial, value);
    if (trivial)
        return value;
    std::vector<double> partial(static_cast<std::size_t>(batch) + 1, 0.0);
#pragma omp parallel for schedule(dynamic, 1)
    for (int n0 = 0; n0 <= batch; ++n0)
        partial[static_cast<std::size_t>(n0)] = partial_for_correct_count(pr, n0);
    double sum = 0.0;
    for (double v : partial)
        sum += v;
    return std::clamp(sum, 0.0, 1.0);
}

double exact_vote_accuracy_serial(const CategoricalPolicySpec& spec, std::string_view correct, int batch)
{
    bool trivial = false;
    double value = 0.0;
    const auto pr = prepare_exact(spec, correct, batch, trivial, value);
    if (trivial)
        return value;
    double sum = 0.0;
    for (int n0 = 0; n0 <= batch; ++n0)
        sum += partial_for_correct_count(pr, n0);
    return std::clamp(sum, 0.0, 1.0);
}

double ci_halfwidth(double p, std::int64_t trials)
{
    if (trials < 1)
        return 1.0;
    const double n = static_cast<double>(trials);
    return 1.959963984540054 * std::sqrt(std::max(p * (1.0 - p), 0.0) / n) + 0.5 / n;
}

namespace {

struct McProblem {
    std::vector<double> cdf;
    int correct = -1;
    int batch = 0;
};

McProblem prepare_mc(const CategoricalPolicySpec& spec, std::string_view correct, int batch, std::int64_t trials)
{
    if (batch < 1)
        throw Error(ErrorCode::invalid_config, "B must be at least 1");
    if (trials < 1)
        throw Error(ErrorCode::invalid_config, "trials must be at least 1");
    const auto model = make_vote_model(spec, correct);
    McProblem pr;
    pr.correct = model.correct;
    pr.batch = batch;
    double acc = 0.0;
    for (double p : model.probabilities)
        pr.cdf.push_back(acc += p);
    return pr;
}

// One vote over B draws; returns whether the correct answer wins.
bool mc_trial(const McProblem& pr, std::uint64_t seed, std::int64_t t, std::vector<int>& counts,
              std::vector<int>& order)
{
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(t)}));
    std::fill(counts.begin(), counts.end(), 0);
    order.clear();
    const int k = static_cast<int>(pr.cdf.size());
    for (int b = 0; b < pr.batch; ++b) {
        const double u = uniform01(rng) * pr.cdf.back();
        int a = 0;
        while (a < k - 1 && u >= pr.cdf[static_cast<std::size_t>(a)])
            ++a;
        if (counts[static_cast<std::size_t>(a)]++ == 0)
            order.push_back(a);
    }
    int best = order.front();
    for (int a : order)
        if (counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(best)])
            best = a;
    return best == pr.correct;
}

VoteEstimate finish(std::int64_t hits, std::int64_t trials)
{
    VoteEstimate e;
    e.trials = trials;
    e.hits = hits;
    e.accuracy = static_cast<double>(hits) / static_cast<double>(trials);
    e.ci_halfwidth = ci_halfwidth(e.accuracy, trials);
    return e;
}

}  // namespace

VoteEstimate mc_vote_accuracy(const CategoricalPolicySpec& spec, std::string_view correct, int batch,
                              std::int64_t trials, std::uint64_t seed)
{
    const auto pr = prepare_mc(spec, correct, batch, trials);
    if (pr.correct < 0)
        return finish(0, trials);
    std::int64_t hits = 0;
#pragma omp parallel reduction(+ : hits)
    {
        std::vector<int> counts(pr.cdf.size());
        std::vector<int> order;
        order.reserve(pr.cdf.size());
#pragma omp for schedule(static)
        for (std::int64_t t = 0; t < trials; ++t)
            hits += mc_trial(pr, seed, t, counts, order) ? 1 : 0;
    }
    return finish(hits, trials);
}

VoteEstimate mc_vote_accuracy_serial(const CategoricalPolicySpec& spec, std::string_view correct, int batch,
                                     std::int64_t trials, std::uint64_t seed)
{
    const auto pr = prepare_mc(spec, correct, batch, trials);
    if (pr.correct < 0)
        return finish(0, trials);
    std::vector<int> counts(pr.cdf.size());
    std::vector<int> order;
    std::int64_t hits = 0;
    for (std::int64_t t = 0; t < trials; ++t)
        hits += mc_trial(pr, seed, t, counts, order) ? 1 : 0;
    return finish(hits, trials);
}

std::string_view to_string(LimitClass c)
{
    switch (c) {
    case LimitClass::to_one: return "to_one";
    case LimitClass::to_zero: return "to_zero";
    case LimitClass::to_half: return "to_half";
    }
    return "unknown";
}

LimitClass classify_limit(const CategoricalPolicySpec& spec, std::string_view correct)
{
    const auto model = make_vote_model(spec, correct);
    if (model.correct < 0)
        return LimitClass::to_zero;
    const double pc = model.probabilities[static_cast<std::size_t>(model.correct)];
    double rival = 0.0;
    for (std::size_t i = 0; i < model.probabilities.size(); ++i)
        if (static_cast<int>(i) != model.correct)
            rival = std::max(rival, model.probabilities[i]);
    if (std::abs(pc - rival) <= 1e-12)
        return LimitClass::to_half;
    return pc > rival ? LimitClass::to_one : LimitClass::to_zero;
}

double limit_value(LimitClass c)
{
    switch (c) {
    case LimitClass::to_one: return 1.0;
    case LimitClass::to_zero: return 0.0;
    case LimitClass::to_half: return 0.5;
    }
    return 0.0;
}

std::string_view to_string(CurveMethod m) { return m == CurveMethod::exact ? "exact" : "monte_carlo"; }

VoteScalingCurve scaling_curve(const CategoricalPolicySpec& spec, std::string_view correct,
                               const std::vector<int>& batches, std::int64_t trials, std::uint64_t seed)
{
    if (batches.empty())
        throw Error(ErrorCode::invalid_config, "B list must be non-empty");
    VoteScalingCurve curve;
    curve.spec = spec;
    curve.correct = std::string(correct);
    int previous = 0;
    for (int b : batches) {
        if (b <= previous)
            throw Error(ErrorCode::invalid_config, "B values must be positive and strictly increasing");
        previous = b;
        CurvePoint point;
        point.batch = b;
        try {
            point.accuracy = exact_vote_accuracy(spec, correct, b);
            point.method = CurveMethod::exact;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::instance_too_large)
                throw;
            auto est = mc_vote_accuracy(spec, correct, b, trials, derive_seed(seed, {static_cast<std::uint64_t>(b)}));
            point.accuracy = est.accuracy;
            point.method = CurveMethod::monte_carlo;
            point.trials = est.trials;
            point.ci_halfwidth = est.ci_halfwidth;
        }
        curve.points.push_back(point);
    }
    return curve;
}

}  // namespace tts
