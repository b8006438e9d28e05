#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "iemisim/common.hpp"

namespace iemisim {

/// Circuit constants of one charge-transfer (QT) sensing channel.
struct SensorParams {
    double v_in_v = 5.0;       ///< excitation voltage
    double r_in_ohm = 1.0;     ///< source resistance of the charge path
    double r_s_ohm = 1.0;      ///< series resistance of the transfer path
    double c_m_f = 3e-12;      ///< mutual capacitance between TX and RX
    double c_s_f = 10e-12;     ///< integrator feedback capacitance
    double delta_c_f = 0.5e-12;///< capacitance change of a nominal finger touch
    double v_th_v = 2.75;      ///< single-comparison threshold
    /// Threshold for the N-cycle comparison; defaults to n_cycles * v_th_v
    /// when left unset.
    std::optional<double> v_th_n_v;
    double f_sw_hz = 100e3;    ///< switch-cycle frequency
    double d_s = 0.125;        ///< sensing duty cycle, fraction of one cycle
    int n_cycles = 64;         ///< cycles accumulated per threshold comparison

    double cycle_period_s() const { return 1.0 / f_sw_hz; }

    /// Sensing time per cycle.
    double t_s() const { return d_s / f_sw_hz; }

    double threshold_n_v() const { return v_th_n_v ? *v_th_n_v : n_cycles * v_th_v; }

    void validate() const {
        if (!(v_in_v > 0)) throw std::invalid_argument("v_in_v must be > 0");
        if (!(r_in_ohm > 0) || !(r_s_ohm > 0)) throw std::invalid_argument("resistances must be > 0");
        if (!(c_m_f > 0) || !(c_s_f > 0)) throw std::invalid_argument("capacitances must be > 0");
        if (!(v_th_v > 0)) throw std::invalid_argument("v_th_v must be > 0");
        if (!(f_sw_hz > 0)) throw std::invalid_argument("f_sw_hz must be > 0");
        if (!(d_s > 0 && d_s < 1)) throw std::invalid_argument("d_s must lie in (0,1)");
        if (n_cycles < 1) throw std::invalid_argument("n_cycles must be >= 1");
        if (v_th_n_v && !(*v_th_n_v > 0)) throw std::invalid_argument("v_th_n_v must be > 0");
    }
};

/// The canonical single-channel simulation setup: 5 V excitation, 3 pF
/// mutual capacitance, 10 pF integrator, 2.75 V threshold, 100 kHz switch
/// clock. The accumulated deviation is compared against v_th itself
/// (multi-cycle reading), so v_th_n is pinned to v_th here.
inline SensorParams reference_sensor_params() {
    SensorParams p;
    p.v_in_v = 5.0;
    p.r_in_ohm = 1.0;
    p.r_s_ohm = 1.0;
    p.c_m_f = 3e-12;
    p.c_s_f = 10e-12;
    p.delta_c_f = 0.5e-12;
    p.v_th_v = 2.75;
    p.v_th_n_v = 2.75;
    p.f_sw_hz = 100e3;
    p.d_s = 0.125;
    p.n_cycles = 64;
    return p;
}

/// Open/close intervals of the three switches, as phase fractions of one
/// switch cycle. S1 charges the mutual capacitance, S2 transfers the charge
/// into the integrator, S3 resets the integrator at the start of each
/// accumulation window.
struct SwitchSchedule {
    double s1_begin = 0.0;
    double s1_end = 0.875;
    double s2_begin = 0.875;
    double s2_end = 1.0;
    double s3_begin = 0.0;
    double s3_end = 0.01;

    /// Default ordering: S1 closed for the first (1 - d_s) of the cycle,
    /// S2 for the final d_s, S3 pulsing while S2 is open.
    static SwitchSchedule for_duty(double d_s) {
        SwitchSchedule s;
        s.s1_begin = 0.0;
        s.s1_end = 1.0 - d_s;
        s.s2_begin = 1.0 - d_s;
        s.s2_end = 1.0;
        s.s3_begin = 0.0;
        s.s3_end = std::fmin(0.01, (1.0 - d_s) * 0.5);
        return s;
    }

    void validate() const {
        auto ordered = [](double a, double b) { return a >= 0.0 && a < b && b <= 1.0; };
        if (!ordered(s1_begin, s1_end) || !ordered(s2_begin, s2_end) || !ordered(s3_begin, s3_end))
            throw std::invalid_argument("switch intervals must be ordered within [0,1]");
        // S1 and S2 must never conduct together.
        if (s1_end > s2_begin && s2_end > s1_begin)
            throw std::invalid_argument("S1 and S2 intervals overlap");
        // S3 may only close while S2 is open.
        if (s3_end > s2_begin && s2_end > s3_begin)
            throw std::invalid_argument("S3 closes while S2 is closed");
    }
};

/// Sinusoidal interference referred to the sensor input. phi0 is the phase
/// of the noise current relative to the start of the S2 window.
struct NoiseInput {
    double v_n_v = 0.0;
    double f_e_hz = 100e3;
    double phi0_rad = 0.0;

    void validate() const {
        if (v_n_v < 0) throw std::invalid_argument("v_n_v must be >= 0");
        if (!(f_e_hz > 0)) throw std::invalid_argument("f_e_hz must be > 0");
    }
};

/// Voltage across the mutual capacitance after charging for time t through
/// r_in: v_in * (1 - exp(-t / (r_in * c_m))).
inline double charge_voltage(const SensorParams& p, double t_s) {
    if (t_s < 0) throw std::invalid_argument("charge time must be >= 0");
    return p.v_in_v * (1.0 - std::exp(-t_s / (p.r_in_ohm * p.c_m_f)));
}

/// Integrator output once the charge held at v_c has fully transferred:
/// -(c_m + delta_c) / c_s * v_c.
inline double transfer_output(const SensorParams& p, double v_c, double delta_c_effective_f) {
    return -((p.c_m_f + delta_c_effective_f) / p.c_s_f) * v_c;
}

/// Deviation contributed by a capacitance change alone.
inline double transfer_deviation(const SensorParams& p, double v_c, double delta_c_f) {
    return -(delta_c_f / p.c_s_f) * v_c;
}

/// Snapshot of the simulated channel at one time step.
struct SensorState {
    double time_s = 0.0;
    double v_c_v = 0.0;      ///< voltage across the mutual capacitance
    double v_o_v = 0.0;      ///< integrator output
    double sum_v_t_v = 0.0;  ///< accumulated deviation from the calibrated baseline
    int cycle_index = 0;     ///< 1-based switch cycle counter
};

struct TraceResult {
    std::vector<SensorState> samples;
    bool crossed = false;
    int first_crossing_cycle = 0;  ///< 1-based; 0 when the threshold was never reached
};

namespace detail {

/// One integrator channel advanced with exact piecewise updates. The RC
/// time constants here (ohms times picofarads) are far below any sensible
/// step size, so each phase uses the closed-form exponential rather than a
/// finite-difference update.
struct ChannelSim {
    const SensorParams& p;
    const SwitchSchedule& sched;
    double delta_c_f;  // capacitance offset active this run

    double v_c = 0.0;
    double v_o = 0.0;

    double effective_c_m() const { return p.c_m_f + delta_c_f; }

    void step_charge(double dt) {
        const double tau = p.r_in_ohm * effective_c_m();
        v_c += (p.v_in_v - v_c) * -std::expm1(-dt / tau);
    }

    void step_transfer(double dt) {
        const double tau = p.r_s_ohm * effective_c_m();
        const double drop = v_c * -std::expm1(-dt / tau);
        v_c -= drop;
        v_o -= (effective_c_m() * drop) / p.c_s_f;
    }

    void reset_integrator() { v_o = 0.0; }
};

}  // namespace detail

/// Time-stepped simulation of one channel over `duration_s`.
///
/// The accumulated deviation sum_v_t is measured against a baseline run
/// (same schedule, no touch, no noise), mirroring per-node calibration in
/// real controllers. The integrator resets every n_cycles cycles; the
/// threshold comparison |sum_v_t| >= v_th_n runs at the end of every cycle
/// inside the window.
///
/// `touch` maps time to an effective capacitance change (nullptr = none).
inline TraceResult simulate_trace(const SensorParams& p,
                                  const SwitchSchedule& sched,
                                  const std::function<double(double)>& touch,
                                  const std::optional<NoiseInput>& noise,
                                  double dt_s,
                                  double duration_s) {
    p.validate();
    sched.validate();
    if (noise) noise->validate();
    const double period = p.cycle_period_s();
    if (!(dt_s > 0) || dt_s > period / 100.0)
        throw std::invalid_argument("dt must be positive and at most 1/(100*f_sw)");
    if (duration_s < p.n_cycles * period)
        throw std::invalid_argument("duration must cover at least one full accumulation window");

    const int steps_per_cycle = static_cast<int>(std::llround(period / dt_s));
    const int total_cycles = static_cast<int>(duration_s / period);
    const double step = period / steps_per_cycle;

    detail::ChannelSim main{p, sched, 0.0};
    detail::ChannelSim base{p, sched, 0.0};

    TraceResult result;
    result.samples.reserve(static_cast<std::size_t>(total_cycles) * steps_per_cycle + 1);

    // Noise phase convention: the argument of the noise current equals phi0
    // at the moment the first S2 window opens.
    double phase_offset = 0.0;
    if (noise) phase_offset = noise->phi0_rad - 2.0 * k_pi * noise->f_e_hz * (sched.s2_begin * period);

    // Integral of the noise current into the integrator over [t0, t1]:
    // -(c_m * v_n / c_s) * (sin(w*t1 + phase) - sin(w*t0 + phase)).
    auto noise_delta = [&](double t0, double t1) {
        if (!noise || noise->v_n_v == 0.0) return 0.0;
        const double w = 2.0 * k_pi * noise->f_e_hz;
        return -(p.c_m_f * noise->v_n_v / p.c_s_f) *
               (std::sin(w * t1 + phase_offset) - std::sin(w * t0 + phase_offset));
    };

    const double v_th_n = p.threshold_n_v();

    for (int cycle = 0; cycle < total_cycles; ++cycle) {
        const double cycle_start = cycle * period;
        const bool window_start = (cycle % p.n_cycles) == 0;
        if (window_start) {  // S3 pulse discharges the integrator
            main.reset_integrator();
            base.reset_integrator();
        }
        for (int i = 0; i < steps_per_cycle; ++i) {
            const double t0 = cycle_start + i * step;
            const double t1 = t0 + step;
            const double ph0 = static_cast<double>(i) / steps_per_cycle;
            const double ph_mid = (i + 0.5) / steps_per_cycle;

            main.delta_c_f = touch ? touch(t0) : 0.0;

            const bool in_s1 = ph_mid >= sched.s1_begin && ph_mid < sched.s1_end;
            const bool in_s2 = ph_mid >= sched.s2_begin && ph_mid < sched.s2_end;
            (void)ph0;
            if (in_s1) {
                main.step_charge(step);
                base.step_charge(step);
            } else if (in_s2) {
                main.step_transfer(step);
                base.step_transfer(step);
                main.v_o += noise_delta(t0, t1);
            }

            SensorState st;
            st.time_s = t1;
            st.v_c_v = main.v_c;
            st.v_o_v = main.v_o;
            st.sum_v_t_v = main.v_o - base.v_o;
            st.cycle_index = cycle + 1;
            result.samples.push_back(st);
        }
        if (!result.crossed) {
            const double dev = main.v_o - base.v_o;
            if (std::fabs(dev) >= v_th_n - k_threshold_guard_v) {
                result.crossed = true;
                result.first_crossing_cycle = cycle + 1;
            }
        }
    }
    return result;
}

/// Convenience: constant capacitance change switched on for the whole run.
inline std::function<double(double)> constant_touch(double delta_c_f) {
    return [delta_c_f](double) { return delta_c_f; };
}

/// N-cycle recognition rule: true iff |sum of deviations| >= v_th_n.
inline bool detect_touch(std::span<const double> deviations_v, const SensorParams& p) {
    if (deviations_v.size() != static_cast<std::size_t>(p.n_cycles))
        throw std::invalid_argument("deviation list must hold exactly n_cycles entries");
    double sum = 0.0;
    for (double d : deviations_v) sum += d;
    return std::fabs(sum) >= p.threshold_n_v() - k_threshold_guard_v;
}

}  // namespace iemisim
