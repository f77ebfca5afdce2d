#pragma once

#include <cstdint>
#include <string_view>

namespace confshare {

/// 64-bit FNV-1a hash.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 0xcbf29ce484222325ULL);

/// SplitMix64 generator.
///
/// The state starts at the seed and advances by 0x9E3779B97F4A7C15 per draw;
/// each output is the SplitMix64 finalizer applied to the new state. The
/// algorithm uses only 64-bit wrapping integer arithmetic, so a given seed
/// yields the same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t mix(uint64_t z);

    uint64_t next_u64();
    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n) by rejection, n > 0.
    uint64_t below(uint64_t n);

    /// Independent stream keyed by a label, e.g. a parameter key.
    Rng fork(std::string_view label) const { return Rng(mix(state_ ^ fnv1a64(label))); }

private:
    uint64_t state_;
};

}  // namespace confshare
