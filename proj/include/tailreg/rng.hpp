// rng.hpp -- deterministic random number generation.
//
// The Monte Carlo harness must produce bit-identical results for a given master
// seed regardless of thread count or standard-library version. std::mt19937_64
// would do for the engine, but the std::*_distribution wrappers are not
// specified bit-exactly across implementations, so both the engine and the
// variate transforms are written out explicitly here:
//   - engine: xoshiro256++ (Blackman & Vigna), seeded through splitmix64;
//   - child streams: one splitmix64 output of (seed, index) re-seeds a fresh
//     engine, giving independent, reproducible per-replication streams;
//   - variates: inverse-CDF / Box-Muller style transforms on 53-bit uniforms.
#pragma once

#include <cstdint>

namespace tailreg {

// One step of the splitmix64 sequence; also used as a mixing function.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derive a well-mixed child seed from a master seed and a stream index.
// Used for per-replication and per-bootstrap-resample streams.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master + (index + 1) * 0x9E3779B97F4A7C15ULL;
    return splitmix64(s);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        // Seed the four state words from splitmix64 as recommended by the
        // xoshiro authors; guards against the all-zero state.
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    // xoshiro256++ next value.
    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits (the double-precision maximum).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return 1.0 - uniform01(); }

    // Standard normal via Box-Muller; caches the second variate of each pair.
    double normal();

    // Exponential(1) via inversion.
    double exponential();

    // Gamma(2,1) as a sum of two unit exponentials.
    double gamma2();

    // Student-t with `dof` degrees of freedom: Z / sqrt(chi2_dof / dof),
    // chi-square built from dof squared normals (dof must be a small integer).
    double student_t(int dof);

    // Integer uniform on {0, 1, ..., bound-1} by rejection (unbiased).
    std::uint64_t uniform_below(std::uint64_t bound);

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

} // namespace tailreg
