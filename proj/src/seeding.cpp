// SPDX-License-Identifier: Apache-2.0
#include "tts/seeding.hpp"

namespace tts {

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts)
{
    std::uint64_t h = mix64(base);
    for (auto p : parts)
        h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

// FNV-1a, 64 bit
std::uint64_t hash_text(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t uniform_index(std::uint64_t seed, std::uint64_t n)
{
    if (n <= 1)
        return 0;
    const unsigned __int128 wide = static_cast<unsigned __int128>(mix64(seed)) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

}  // namespace tts
