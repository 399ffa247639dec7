#pragma once

#include <cstdint>

namespace treerisk {

/// Deterministic, platform-independent RNG (splitmix64).
///
/// Standard-library distributions are implementation defined, so probe
/// batches use this generator directly: a (seed, stream) pair always yields
/// the same sequence, which keeps reports byte-identical across runs and lets
/// independent probe tasks draw from split streams.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed * 0x9E3779B97F4A7C15ULL + 0x8BADF00DULL) {}

    /// Derive an independent stream for a subtask; pure function of (seed, id).
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
        Rng r(seed);
        r.state_ ^= 0xD1B54A32D192ED03ULL * (stream_id + 1);
        r.next_u64();
        return r;
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in {0, ..., n-1}.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t state_;
};

}  // namespace treerisk
