#pragma once

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace iemisim {

/// Vacuum permittivity, F/m.
inline constexpr double k_epsilon0 = 8.8541878128e-12;

inline constexpr double k_pi = 3.141592653589793238462643383279502884;

/// Absolute guard applied to threshold comparisons so that sums landing
/// exactly on the threshold (e.g. 11 * 0.25 V vs 2.75 V) are not lost to
/// rounding in the last ulp.
inline constexpr double k_threshold_guard_v = 1e-9;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InferenceFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SegmentationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PoseUnsolvable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LocateFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CoverageGap : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Locale-independent formatting used for every file the library writes.
/// %.17g round-trips doubles exactly; %.12g is used for human-facing values.
inline std::string format_double(double v, int precision = 12) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return std::string(buf);
}

inline std::string format_double_exact(double v) { return format_double(v, 17); }

/// FNV-1a, the hash used for config provenance stamps.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline bool nearly_equal(double a, double b, double rel = 1e-9, double abs_tol = 0.0) {
    const double diff = std::fabs(a - b);
    if (diff <= abs_tol) return true;
    return diff <= rel * std::fmax(std::fabs(a), std::fabs(b));
}

/// True when x is an integer to within |tol| (relative to magnitude above 1).
inline bool is_near_integer(double x, double tol = 1e-9) {
    return std::fabs(x - std::round(x)) <= tol * std::fmax(1.0, std::fabs(x));
}

}  // namespace iemisim
