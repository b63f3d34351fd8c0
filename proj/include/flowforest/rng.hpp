#pragma once

#include <cstdint>

namespace flowforest {

/// SplitMix64 generator. Used everywhere randomness is needed so that results
/// are reproducible across platforms and standard library versions (std::
/// distributions are implementation-defined).
class rng64 {
public:
    explicit rng64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) { return next() % n; }

    /// Uniform integer in [lo, hi] inclusive.
    uint64_t range(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    bool chance(double p) { return uniform() < p; }

private:
    uint64_t state_;
};

/// Mixes a base seed with a stream index to derive independent substreams
/// (per tree, per fold, ...). Parallel and serial schedules then agree
/// bit-for-bit because each work item owns its generator.
inline uint64_t substream_seed(uint64_t seed, uint64_t stream) {
    rng64 r(seed ^ (0x517cc1b727220a95ULL * (stream + 1)));
    return r.next();
}

} // namespace flowforest
