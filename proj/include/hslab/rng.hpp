#pragma once

#include <cstdint>
#include <random>

namespace hslab {

/// Stream identifiers, so that independent consumers of one seed never share draws.
enum class StreamKind : std::uint32_t {
    Brownian = 0,
    BrownianQ = 1,
    BallSampling = 2,
    Bootstrap = 3,
};

/// Engine keyed by (seed, stream, index). The same key always yields the same
/// sequence, so per-path results do not depend on scheduling.
inline std::mt19937_64 keyed_engine(std::uint64_t seed, StreamKind stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace hslab
