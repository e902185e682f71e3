#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace egoprep {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based seed derivation: the stream for (master, tags...) never
/// depends on how many other streams were drawn before it.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t s = mix64(master);
    for (std::uint64_t t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
    return s;
}

/// Role tags used when fanning a master seed out to sub-streams.
namespace seed_role {
inline constexpr std::uint64_t instance = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t egop = 3;
inline constexpr std::uint64_t batches = 4;
inline constexpr std::uint64_t completion = 5;
inline constexpr std::uint64_t split = 6;
inline constexpr std::uint64_t params = 7;
} // namespace seed_role

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

} // namespace egoprep
