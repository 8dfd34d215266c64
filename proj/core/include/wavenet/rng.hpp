#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "wavenet/errors.hpp"

namespace wavenet {

/// Seedable 64-bit generator used for every random choice in the project.
///
/// Wraps std::mt19937_64 (whose raw output sequence is fully specified by the
/// standard) and derives doubles and categorical draws from the raw bits with
/// explicit arithmetic, so that sequences are reproducible given a seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1): top 53 bits of the raw output scaled by 2^-53.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        // Multiply-shift reduction of the 53-bit uniform; bias is negligible
        // for the desk-scale n used here and the mapping is platform-stable.
        return static_cast<std::uint64_t>(next_double() * static_cast<double>(n));
    }

    /// Inverse-CDF categorical draw: u ~ U[0,1), return the smallest index i
    /// with sum(p[0..i]) > u. Probabilities are assumed non-negative; a
    /// not-quite-1 total falls through to the last index.
    int categorical(std::span<const float> probs) {
        const double u = next_double();
        double cum = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            cum += static_cast<double>(probs[i]);
            if (u < cum) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    std::mt19937_64 engine_;
};

/// splitmix64 step; used to derive independent stream seeds from one root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace wavenet
