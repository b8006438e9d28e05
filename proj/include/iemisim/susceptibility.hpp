#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "iemisim/common.hpp"
#include "iemisim/field.hpp"
#include "iemisim/sensor.hpp"

namespace iemisim {

/// Phase advance of the interference across one sensing window:
/// 2*pi * d_s * f_e / f_sw.
inline double sensing_window_phase(const SensorParams& p, double f_e_hz) {
    return 2.0 * k_pi * p.d_s * f_e_hz / p.f_sw_hz;
}

/// Closed-form deviation one sensing window picks up from the noise input:
/// -(c_m * v_n / c_s) * (sin(x + phi0) - sin(phi0)) with x the window phase.
inline double v_tn_closed(const SensorParams& p, const NoiseInput& n) {
    const double x = sensing_window_phase(p, n.f_e_hz);
    return -(p.c_m_f * n.v_n_v / p.c_s_f) * (std::sin(x + n.phi0_rad) - std::sin(n.phi0_rad));
}

/// Trapezoidal quadrature of the noise-current integral over one sensing
/// window. Serves as the independent check of v_tn_closed.
inline double v_tn_numeric(const SensorParams& p, const NoiseInput& n, int steps) {
    if (steps < 1000) throw std::invalid_argument("v_tn_numeric requires at least 1000 steps");
    const double t_s = p.t_s();
    const double w = 2.0 * k_pi * n.f_e_hz;
    const double scale = -(w * p.c_m_f * n.v_n_v) / p.c_s_f;
    const double h = t_s / steps;
    double acc = 0.5 * (std::cos(n.phi0_rad) + std::cos(w * t_s + n.phi0_rad));
    for (int i = 1; i < steps; ++i) acc += std::cos(w * (i * h) + n.phi0_rad);
    return scale * acc * h;
}

struct SusceptibilityQuery {
    SensorParams sensor;
    NoiseInput noise;
    int m_cycles = 1;

    void validate() const {
        sensor.validate();
        noise.validate();
        if (m_cycles < 1) throw std::invalid_argument("m_cycles must be >= 1");
    }
};

/// Accumulated deviation over m consecutive cycles. The window phase shifts
/// by 2*pi * f_e / f_sw per cycle, so only integer harmonics of f_sw add up
/// coherently.
inline double accumulate_m_cycles(const SusceptibilityQuery& q) {
    q.validate();
    const double x = sensing_window_phase(q.sensor, q.noise.f_e_hz);
    const double psi = 2.0 * k_pi * q.noise.f_e_hz / q.sensor.f_sw_hz;
    const double amp = -(q.sensor.c_m_f * q.noise.v_n_v / q.sensor.c_s_f);
    double sum = 0.0;
    for (int m = 0; m < q.m_cycles; ++m) {
        const double phi_m = q.noise.phi0_rad + m * psi;
        sum += std::sin(x + phi_m) - std::sin(phi_m);
    }
    return amp * sum;
}

struct FrequencySets {
    std::vector<double> f_emax_hz;
    std::vector<double> f_emin_hz;
    double band_low_hz = 0.0;
    double band_high_hz = 0.0;
};

/// Enumerates the zero-coupling and peak-coupling interference frequencies
/// inside [band_low, band_high].
///
/// Zeros: f = k * f_sw / d_s (the window phase is a multiple of 2*pi, so the
/// window picks up nothing at any phase). Peaks: f = (1 + 4k) / (4 d_s) * f_sw
/// or (3 + 4k) / (4 d_s) * f_sw, kept only when f is also an integer harmonic
/// of f_sw so the per-cycle phase stays put and the cycles add up.
inline FrequencySets predict_frequency_sets(double f_sw_hz, double d_s,
                                            double band_low_hz, double band_high_hz) {
    if (!(f_sw_hz > 0) || !(d_s > 0 && d_s < 1))
        throw std::invalid_argument("f_sw must be > 0 and d_s in (0,1)");
    if (!(band_low_hz > 0) || band_high_hz > 10e6 || band_low_hz > band_high_hz)
        throw std::invalid_argument("band must lie within (0, 10 MHz]");

    FrequencySets sets;
    sets.band_low_hz = band_low_hz;
    sets.band_high_hz = band_high_hz;

    const double p = f_sw_hz / d_s;  // period of the window-phase pattern

    for (int k = 1;; ++k) {
        const double f = k * p;
        if (f > band_high_hz) break;
        if (f >= band_low_hz) sets.f_emin_hz.push_back(f);
    }

    auto add_peaks = [&](double numerator_offset) {
        for (int k = 0;; ++k) {
            const double f = f_sw_hz * (numerator_offset + 4.0 * k) / (4.0 * d_s);
            if (f > band_high_hz) break;
            const double n = f / f_sw_hz;
            if (f >= band_low_hz && is_near_integer(n)) sets.f_emax_hz.push_back(f);
        }
    };
    add_peaks(1.0);
    add_peaks(3.0);
    std::sort(sets.f_emax_hz.begin(), sets.f_emax_hz.end());
    sets.f_emax_hz.erase(std::unique(sets.f_emax_hz.begin(), sets.f_emax_hz.end()),
                         sets.f_emax_hz.end());
    return sets;
}

/// Optional notch mask for frequencies a given device filters internally.
/// Removes every peak within `tol_hz` of a notch frequency.
inline FrequencySets apply_notch_mask(FrequencySets sets, const std::vector<double>& notches_hz,
                                      double tol_hz = 1.0) {
    auto masked = [&](double f) {
        for (double n : notches_hz)
            if (std::fabs(f - n) <= tol_hz) return true;
        return false;
    };
    sets.f_emax_hz.erase(
        std::remove_if(sets.f_emax_hz.begin(), sets.f_emax_hz.end(), masked),
        sets.f_emax_hz.end());
    return sets;
}

struct SensorTiming {
    double f_sw_hz = 0.0;
    double d_s = 0.0;
};

/// Recovers (f_sw, d_s) from adjacent peak-coupling frequencies.
///
/// Adjacent peaks are separated by f_sw / (2 d_s), which pins the pattern
/// period but not f_sw itself: every (f_sw/j, d_s/j) with integer j predicts
/// the same peak set. The search below enumerates harmonic assignments up to
/// index 100 and keeps candidates that reproduce every observation; among
/// them it prefers the largest f_sw whose harmonic indices are all even,
/// which selects the d_s = 1/8 member of the family for peak sets of the
/// usual quarter-period shape.
inline SensorTiming infer_sensor_timing(std::vector<double> observed_maxima_hz) {
    if (observed_maxima_hz.size() < 2)
        throw std::invalid_argument("need at least two adjacent maxima");
    std::sort(observed_maxima_hz.begin(), observed_maxima_hz.end());
    const double f1 = observed_maxima_hz.front();
    const double spacing = observed_maxima_hz[1] - observed_maxima_hz[0];
    if (!(f1 > 0) || !(spacing > 0))
        throw InferenceFailure("observed maxima must be positive and distinct");
    const double pattern_period = 2.0 * spacing;

    auto reproduces_all = [&](double f_sw, double d_s) {
        const double lo = observed_maxima_hz.front() * 0.5;
        const double hi = observed_maxima_hz.back() * 1.5;
        FrequencySets sets;
        try {
            sets = predict_frequency_sets(f_sw, d_s, lo, std::fmin(hi, 10e6));
        } catch (const std::invalid_argument&) {
            return false;
        }
        for (double f : observed_maxima_hz) {
            bool found = false;
            for (double g : sets.f_emax_hz)
                if (nearly_equal(f, g, 1e-6)) { found = true; break; }
            if (!found) return false;
        }
        return true;
    };

    std::vector<std::pair<SensorTiming, bool>> candidates;  // timing, all-even flag
    for (int n1 = 1; n1 <= 100; ++n1) {
        const double f_sw = f1 / n1;
        const double d_s = f_sw / pattern_period;
        if (!(d_s > 0 && d_s < 1)) continue;
        bool all_integral = true;
        bool all_even = true;
        for (double f : observed_maxima_hz) {
            const double n = f / f_sw;
            if (!is_near_integer(n, 1e-6)) { all_integral = false; break; }
            if (static_cast<long long>(std::llround(n)) % 2 != 0) all_even = false;
        }
        if (!all_integral) continue;
        if (!reproduces_all(f_sw, d_s)) continue;
        candidates.push_back({SensorTiming{f_sw, d_s}, all_even});
    }
    if (candidates.empty())
        throw InferenceFailure("no sensor timing consistent with the observed maxima");
    for (const auto& [timing, even] : candidates)  // sorted by descending f_sw already
        if (even) return timing;
    return candidates.front().first;
}

enum class SweepPhasePolicy {
    /// Coherent response anchored at the zero-mean window phases {0, pi}.
    /// Under this convention the minimum-field curve dips exactly at the
    /// predicted peak set and hits the cap at the predicted zeros.
    condition_anchors,
    /// True worst case: |accumulate_m_cycles| maximized over a 64-point
    /// phi0 grid with the per-cycle phase drifting as it really does.
    grid64,
};

struct SweepPoint {
    double frequency_hz = 0.0;
    double min_e_v_per_m = 0.0;
    bool capped = false;
    double worst_phase_rad = 0.0;
};

namespace detail {

/// |accumulated deviation| per volt of v_n at the given phase policy.
inline double sweep_response_per_volt(const SensorParams& sensor, double f_e_hz, int m_cycles,
                                      SweepPhasePolicy policy, double* worst_phase) {
    NoiseInput n;
    n.v_n_v = 1.0;
    n.f_e_hz = f_e_hz;
    if (policy == SweepPhasePolicy::condition_anchors) {
        // With phi0 anchored at 0 (or pi) the per-window pickup is
        // +-(c_m/c_s) * sin(x); treat the m cycles as re-anchored so they
        // add coherently.
        double best = 0.0, best_phi = 0.0;
        for (double phi : {0.0, k_pi}) {
            n.phi0_rad = phi;
            const double r = m_cycles * std::fabs(v_tn_closed(sensor, n));
            if (r > best) { best = r; best_phi = phi; }
        }
        if (worst_phase) *worst_phase = best_phi;
        return best;
    }
    double best = 0.0, best_phi = 0.0;
    for (int i = 0; i < 64; ++i) {
        n.phi0_rad = 2.0 * k_pi * i / 64.0;
        SusceptibilityQuery q{sensor, n, m_cycles};
        const double r = std::fabs(accumulate_m_cycles(q));
        if (r > best) { best = r; best_phi = n.phi0_rad; }
    }
    if (worst_phase) *worst_phase = best_phi;
    return best;
}

}  // namespace detail

/// For each frequency on the grid, the smallest field strength whose induced
/// input voltage pushes the accumulated deviation past the threshold. Points
/// needing more than `e_cap` are reported capped ("no ghost touch").
inline std::vector<SweepPoint> sweep_min_field(const SensorParams& sensor,
                                               const ElectrodeGeometry& geometry,
                                               double band_low_hz, double band_high_hz,
                                               double f_step_hz,
                                               double e_cap_v_per_m = 3000.0,
                                               int m_cycles = 100,
                                               SweepPhasePolicy policy = SweepPhasePolicy::condition_anchors) {
    sensor.validate();
    geometry.validate();
    if (!(f_step_hz > 0)) throw std::invalid_argument("f_step_hz must be > 0");
    if (!(band_low_hz > 0) || band_low_hz > band_high_hz)
        throw std::invalid_argument("invalid sweep band");
    if (m_cycles < 1) throw std::invalid_argument("m_cycles must be >= 1");

    const double v_th_n = sensor.threshold_n_v();
    std::vector<SweepPoint> out;
    const long long npts = static_cast<long long>(std::floor((band_high_hz - band_low_hz) / f_step_hz + 0.5)) + 1;
    out.reserve(static_cast<std::size_t>(npts));
    for (long long i = 0; i < npts; ++i) {
        const double f = band_low_hz + i * f_step_hz;
        if (f > band_high_hz * (1 + 1e-12)) break;
        SweepPoint pt;
        pt.frequency_hz = f;
        const double per_volt =
            detail::sweep_response_per_volt(sensor, f, m_cycles, policy, &pt.worst_phase_rad);
        // deviation(e) = per_volt * gap * e, monotone in e; bisect anyway so
        // the search stays valid for any response model.
        auto crosses = [&](double e) {
            return per_volt * geometry.gap_m * e >= v_th_n - k_threshold_guard_v;
        };
        if (!crosses(e_cap_v_per_m)) {
            pt.capped = true;
            pt.min_e_v_per_m = e_cap_v_per_m;
        } else {
            double lo = 0.0, hi = e_cap_v_per_m;
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (crosses(mid)) hi = mid; else lo = mid;
            }
            pt.min_e_v_per_m = hi;
        }
        out.push_back(pt);
    }
    return out;
}

}  // namespace iemisim
