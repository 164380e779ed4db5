#pragma once

#include <cstdint>
#include <random>

namespace shadow_att {

/// Purpose of a random stream; part of the stream key so that, e.g., the
/// perturbation weights of replicate r never share draws with its data.
enum class StreamRole : std::uint64_t { dgp = 1, perturb = 2, folds = 3, oracle = 4 };

using Rng = std::mt19937_64;

inline constexpr const char* kRngAlgorithm = "mt19937_64/splitmix64-keyed";

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index, StreamRole role) noexcept {
    return mix64(mix64(mix64(seed) ^ index) ^ static_cast<std::uint64_t>(role));
}

/// Independent generator for (seed, index, role).
inline Rng make_stream(std::uint64_t seed, std::uint64_t index, StreamRole role) {
    const std::uint64_t key = stream_key(seed, index, role);
    std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(role)};
    return Rng(seq);
}

}  // namespace shadow_att
