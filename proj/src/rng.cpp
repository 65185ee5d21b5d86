// rng.cpp -- variate transforms for the deterministic generator.
#include "tailreg/rng.hpp"

#include <cmath>

namespace tailreg {

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    // Box-Muller: u1 in (0,1] keeps the log finite; u2 in [0,1).
    const double u1 = uniform_pos();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

double Rng::exponential() { return -std::log(uniform_pos()); }

double Rng::gamma2() { return exponential() + exponential(); }

double Rng::student_t(int dof) {
    const double z = normal();
    double chi2 = 0.0;
    for (int i = 0; i < dof; ++i) {
        const double w = normal();
        chi2 += w * w;
    }
    return z / std::sqrt(chi2 / static_cast<double>(dof));
}

std::uint64_t Rng::uniform_below(std::uint64_t bound) {
    // Rejection sampling on the top bits to avoid modulo bias.
    const std::uint64_t threshold = (0ULL - bound) % bound; // 2^64 mod bound
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

} // namespace tailreg
