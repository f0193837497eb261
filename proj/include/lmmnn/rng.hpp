#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lmmnn {

using Rng = std::mt19937_64;

// Derives an independent 64-bit seed for a named stream. Streams used by the
// simulator: "X", "sizes", "locations", "times", "b", "eps", "W", "bernoulli",
// "split". The harness derives "replication", "data" and per-method streams.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream, std::uint64_t index = 0);

inline Rng make_stream(std::uint64_t parent, std::string_view stream, std::uint64_t index = 0) {
    return Rng(derive_seed(parent, stream, index));
}

}  // namespace lmmnn
