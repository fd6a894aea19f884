// SPDX-License-Identifier: Apache-2.0
//
// Deterministic seed derivation. Every random choice in a run is keyed by
// (run seed, turn, index, purpose) so batches can be generated in any order
// or in parallel and still replay byte-for-byte.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace tts {

/// Salts separating the random streams of one turn.
enum class SeedPurpose : std::uint64_t {
    generation = 0x67656e,
    judge = 0x6a7564,
    negative = 0x6e6567,
    regenerate = 0x726567,
    trial = 0x747269,
};

std::uint64_t mix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

std::uint64_t hash_text(std::string_view text);

/// Uniform double in [0,1) from the top 53 bits of one engine draw.
inline double uniform01(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) as a pure function of the seed.
std::uint64_t uniform_index(std::uint64_t seed, std::uint64_t n);

}  // namespace tts
