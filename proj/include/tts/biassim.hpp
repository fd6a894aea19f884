// SPDX-License-Identifier: Apache-2.0
//
// Majority-vote accuracy under i.i.d. sampling from a categorical answer
// distribution: exact multinomial enumeration, Monte-Carlo estimation, the
// large-B limit classification and scaling curves.
//
// Both kernels have an OpenMP implementation and a serial reference with the
// same results (the exact kernel reduces partial sums in a fixed order, the
// Monte-Carlo kernel reduces integer hit counts).
#pragma once

#include "tts/policy.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace tts {

/// Probability mass per canonical answer, merged over equivalent keys and
/// with zero-probability answers dropped. `correct` is the index of the
/// correct answer or -1 when it has no mass.
struct VoteModel {
    std::vector<std::string> answers;
    std::vector<double> probabilities;
    int correct = -1;
};

VoteModel make_vote_model(const CategoricalPolicySpec& spec, std::string_view correct);

inline constexpr double kMaxExactCompositions = 1e7;

/// Number of count vectors of B draws over k answers: C(B + k - 1, k - 1).
double composition_count(int k, int batch);

/// Exact probability that the vote selects the correct answer. Ties among the
/// modal answers go to the one occurring first, which by exchangeability is
/// each tied answer with probability 1/|tied|. Throws instance_too_large
/// above kMaxExactCompositions.
double exact_vote_accuracy(const CategoricalPolicySpec& spec, std::string_view correct, int batch);
double exact_vote_accuracy_serial(const CategoricalPolicySpec& spec, std::string_view correct, int batch);

struct VoteEstimate {
    double accuracy = 0.0;
    double ci_halfwidth = 0.0;
    std::int64_t trials = 0;
    std::int64_t hits = 0;
};

/// 95% normal-approximation half-width with continuity correction 1/(2n).
double ci_halfwidth(double p, std::int64_t trials);

/// Trial t draws B answers from an engine seeded derive_seed(seed, {t}) and
/// votes with the first-occurrence tie rule.
VoteEstimate mc_vote_accuracy(const CategoricalPolicySpec& spec, std::string_view correct, int batch,
                              std::int64_t trials, std::uint64_t seed);
VoteEstimate mc_vote_accuracy_serial(const CategoricalPolicySpec& spec, std::string_view correct, int batch,
                                     std::int64_t trials, std::uint64_t seed);

enum class LimitClass { to_one, to_zero, to_half };

std::string_view to_string(LimitClass c);

/// Limit of vote accuracy as B grows: compares p(correct) with the largest
/// incorrect probability (equal within 1e-12 gives to_half).
LimitClass classify_limit(const CategoricalPolicySpec& spec, std::string_view correct);

double limit_value(LimitClass c);

enum class CurveMethod { exact, monte_carlo };

std::string_view to_string(CurveMethod m);

struct CurvePoint {
    int batch = 1;
    double accuracy = 0.0;
    CurveMethod method = CurveMethod::exact;
    std::int64_t trials = 0;
    double ci_halfwidth = 0.0;
};

struct VoteScalingCurve {
    CategoricalPolicySpec spec;
    std::string correct;
    std::vector<CurvePoint> points;
};

/// Exact where the composition guard allows, otherwise Monte Carlo with
/// seed derive_seed(seed, {B}). B values must be positive and strictly
/// increasing.
VoteScalingCurve scaling_curve(const CategoricalPolicySpec& spec, std::string_view correct,
                               const std::vector<int>& batches, std::int64_t trials, std::uint64_t seed);

/// Tab-separated table with header "B accuracy method trials ci".
void write_curve_tsv(const VoteScalingCurve& curve, std::ostream& out);

/// Standalone SVG line plot of accuracy against B.
void write_curve_svg(const VoteScalingCurve& curve, std::ostream& out);

}  // namespace tts
