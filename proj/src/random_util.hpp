#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace lexroute::detail {

// Portable draws from mt19937_64: the standard distributions are
// implementation-defined, these are not.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::uint32_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::uint32_t>(rng() % n);
}

}  // namespace lexroute::detail
