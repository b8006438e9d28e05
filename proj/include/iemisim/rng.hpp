#pragma once

#include <cstdint>
#include <cmath>

#include "iemisim/common.hpp"

namespace iemisim {

/// Splittable counter-based generator. Every stream is a pure function of
/// (seed, split tags, counter), so independent subsystems can derive their
/// own streams from one experiment seed without coordinating draw order.
class SplitRng {
public:
    explicit SplitRng(std::uint64_t seed)
        : origin_(mix(seed ^ 0x9e3779b97f4a7c15ull)), state_(origin_) {}

    /// Derives an independent child stream. The child depends only on this
    /// stream's identity and the tag, not on how many values were drawn.
    SplitRng split(std::uint64_t tag) const {
        SplitRng child(0);
        child.origin_ = mix(origin_ ^ mix(tag + 0x632be59bd9b4e019ull));
        child.state_ = child.origin_;
        return child;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        return n == 0 ? 0 : next_u64() % n;
    }

    /// Box-Muller; always consumes exactly two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * k_pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t origin_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace iemisim
