// Test-side oracles, deliberately independent of the library's own
// computation paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "iemisim/sensor.hpp"

namespace oracles {

/// Transient simulation of the charge-transfer integrator: a capacitor
/// c_m (+ delta_c) holding v_c discharges through r_s into the virtual
/// ground of an ideal integrator with feedback c_s. Fine fixed-step Euler,
/// run until the charge has fully moved. Returns the final output voltage.
inline double integrator_transfer(double c_m, double c_s, double r_s, double v_c,
                                  double delta_c = 0.0) {
    const double c_eff = c_m + delta_c;
    const double tau = r_s * c_eff;
    const double dt = tau / 2000.0;
    double v_cm = v_c;
    double v_o = 0.0;
    // 40 time constants leaves less than 1e-17 of the charge behind
    const int steps = 80000;
    for (int i = 0; i < steps; ++i) {
        const double current = v_cm / r_s;
        v_cm -= current / c_eff * dt;
        v_o -= current / c_s * dt;
    }
    return v_o;
}

/// Simpson-rule integral of the noise current over one sensing window,
/// an independent check on both the closed form and the library trapezoid.
inline double noise_window_deviation(double c_m, double c_s, double v_n, double f_e,
                                     double phi0, double t_s, int intervals = 200000) {
    if (intervals % 2) ++intervals;
    const double w = 2.0 * iemisim::k_pi * f_e;
    auto f = [&](double t) { return std::cos(w * t + phi0); };
    const double h = t_s / intervals;
    double acc = f(0.0) + f(t_s);
    for (int i = 1; i < intervals; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(i * h);
    const double integral = acc * h / 3.0;
    return -(w * c_m * v_n / c_s) * integral;
}

/// Inclusive-method quartile deviation computed the long way.
inline double quartile_deviation_sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double h = (static_cast<double>(v.size()) - 1.0) * p;
        const std::size_t i = static_cast<std::size_t>(h);
        const std::size_t j = std::min(i + 1, v.size() - 1);
        return v[i] + (h - i) * (v[j] - v[i]);
    };
    return 0.5 * (q(0.75) - q(0.25));
}

}  // namespace oracles
