#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace kanalysis {

// Stream tags so that draws made for different purposes under the same
// user seed never share a generator state.
enum class Stream : std::uint64_t {
    Subsets = 0x5355425345545331ULL,
    Sites = 0x5349544553414d50ULL,
    Permutation = 0x5045524d55544531ULL,
    Search = 0x5345415243483031ULL,
    Synth = 0x53594e5448455331ULL,
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a 64-bit key from a seed, a stream tag and a tuple of counters.
/// The same (seed, stream, counters) always yields the same key.
constexpr std::uint64_t derive_key(std::uint64_t seed, Stream stream,
                                   std::initializer_list<std::uint64_t> counters) noexcept {
    std::uint64_t h = mix64(seed ^ static_cast<std::uint64_t>(stream));
    for (std::uint64_t c : counters) h = mix64(h ^ mix64(c));
    return h;
}

/// A fresh engine for one keyed draw sequence.
inline std::mt19937_64 keyed_engine(std::uint64_t seed, Stream stream,
                                    std::initializer_list<std::uint64_t> counters) {
    return std::mt19937_64{derive_key(seed, stream, counters)};
}

} // namespace kanalysis
