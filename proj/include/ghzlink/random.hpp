#pragma once

#include <cstdint>
#include <random>

namespace ghzlink {

using rng_engine = std::mt19937_64;

/// Purposes that get independent random substreams from one seed.
enum class stream_purpose : std::uint64_t {
    source = 1,
    fiber = 2,
    analyzer = 3,
    detector = 4,
    dark_counts = 5,
    drift = 6,
    calibration = 7,
    test_data = 8,
};

namespace detail {

[[nodiscard]] constexpr auto splitmix64(std::uint64_t x) noexcept
    -> std::uint64_t {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/**
 * \brief Engine for substream (purpose, index) of a run seed.
 *
 * Substreams are what make block-parallel generation reproduce the
 * sequential result: every block of cycles, every detector channel, every
 * drift step draws from its own engine.
 */
[[nodiscard]] inline auto substream(std::uint64_t seed, stream_purpose purpose,
                                    std::uint64_t index) -> rng_engine {
    auto const a = detail::splitmix64(seed);
    auto const b = detail::splitmix64(a ^ static_cast<std::uint64_t>(purpose));
    auto const c = detail::splitmix64(b ^ detail::splitmix64(index));
    std::seed_seq seq{static_cast<std::uint32_t>(c),
                      static_cast<std::uint32_t>(c >> 32),
                      static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32)};
    return rng_engine(seq);
}

} // namespace ghzlink
