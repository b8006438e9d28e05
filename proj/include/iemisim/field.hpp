#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iemisim/common.hpp"
#include "iemisim/sensor.hpp"

namespace iemisim {

/// Parallel-plate view of one electrode crossing.
struct ElectrodeGeometry {
    double area_m2 = 6.4e-5;   ///< overlap area of the electrodes
    double gap_m = 1e-4;       ///< electrode separation
    double epsilon_r = 1.0;    ///< relative permittivity of the dielectric

    void validate() const {
        if (!(area_m2 > 0)) throw std::invalid_argument("area_m2 must be > 0");
        if (!(gap_m > 0)) throw std::invalid_argument("gap_m must be > 0");
        if (!(epsilon_r >= 1.0)) throw std::invalid_argument("epsilon_r must be >= 1");
    }
};

/// Two excitation plates sandwiching a screen of thickness t, each at
/// distance d from it.
struct PlateSetup {
    double plate_gap_m = 0.01;
    double screen_thickness_m = 0.005;
    double v_e_v = 0.0;

    void validate() const {
        if (!(plate_gap_m > 0)) throw std::invalid_argument("plate_gap_m must be > 0");
        if (!(screen_thickness_m > 0)) throw std::invalid_argument("screen_thickness_m must be > 0");
    }
};

/// Field sample at an electrode pair: the normal field component and what
/// it induces across and on the electrodes.
struct FieldSample {
    double e_z_v_per_m = 0.0;
    double v_n_v = 0.0;  ///< induced voltage, e_z * gap
    double q_n_c = 0.0;  ///< induced charge, v_n * c_m
};

inline double mutual_capacitance(const ElectrodeGeometry& g) {
    g.validate();
    return k_epsilon0 * g.epsilon_r * g.area_m2 / g.gap_m;
}

inline FieldSample induced_sample(double e_z_v_per_m, const ElectrodeGeometry& g) {
    FieldSample s;
    s.e_z_v_per_m = e_z_v_per_m;
    s.v_n_v = e_z_v_per_m * g.gap_m;
    s.q_n_c = s.v_n_v * mutual_capacitance(g);
    return s;
}

/// Charge displaced by a real touch: delta_c * v_c.
inline double touch_charge(double delta_c_f, double v_c_v) { return delta_c_f * v_c_v; }

/// Field strength whose induced charge matches a given touch charge.
inline double critical_field(double q_t_c, const ElectrodeGeometry& g) {
    g.validate();
    if (!(q_t_c > 0)) throw std::invalid_argument("q_t_c must be > 0");
    return q_t_c / (k_epsilon0 * g.epsilon_r * g.area_m2);
}

/// Field between the plates at the screen surface: v_e / (2d + t).
inline double plate_field(const PlateSetup& s) {
    s.validate();
    return s.v_e_v / (2.0 * s.plate_gap_m + s.screen_thickness_m);
}

/// Plate voltage required to reach a target field (inverse of plate_field).
inline double plate_voltage_for_field(double e_z_v_per_m, const PlateSetup& s) {
    s.validate();
    return e_z_v_per_m * (2.0 * s.plate_gap_m + s.screen_thickness_m);
}

inline bool ghost_touch_possible(double e_z_v_per_m, double e_crit_v_per_m) {
    if (e_z_v_per_m < 0 || e_crit_v_per_m < 0)
        throw std::invalid_argument("field strengths must be >= 0");
    return e_z_v_per_m >= e_crit_v_per_m;
}

/// Interference amplitude at the sensor input needed to rival a touch:
/// v_in * delta_c / c_m.
inline double noise_input_required(const SensorParams& p) {
    p.validate();
    return p.v_in_v * p.delta_c_f / p.c_m_f;
}

/// Tabletop material entry: permittivity midpoint plus its reported range,
/// and whether the material shorts out the coupling entirely.
struct MaterialPreset {
    std::string name;
    double epsilon_r_mid = 1.0;
    double epsilon_r_low = 1.0;
    double epsilon_r_high = 1.0;
    bool conductive = false;
};

/// Loads the preset table (CSV: name,epsilon_r_mid,epsilon_r_low,epsilon_r_high,conductive).
inline std::vector<MaterialPreset> load_material_presets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open material presets: " + path);
    std::vector<MaterialPreset> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {  // skip the column header row
            header = false;
            continue;
        }
        std::istringstream ss(line);
        MaterialPreset m;
        std::string field;
        std::getline(ss, m.name, ',');
        std::getline(ss, field, ',');
        m.epsilon_r_mid = std::stod(field);
        std::getline(ss, field, ',');
        m.epsilon_r_low = std::stod(field);
        std::getline(ss, field, ',');
        m.epsilon_r_high = std::stod(field);
        std::getline(ss, field, ',');
        m.conductive = (field == "1" || field == "true");
        out.push_back(std::move(m));
    }
    if (out.empty()) throw std::runtime_error("material preset table is empty: " + path);
    return out;
}

/// Scalar coupling factor for a tabletop between antenna and screen.
/// Conductive materials block the field entirely; otherwise the factor
/// decays smoothly with thickness and equals 1 at the 10 mm reference.
inline double coupling_attenuation(const MaterialPreset& m, double thickness_m) {
    if (!(thickness_m > 0)) throw std::invalid_argument("thickness must be > 0");
    if (m.conductive) return 0.0;
    constexpr double t_ref = 0.010;
    constexpr double per_5mm = 0.8;
    const double factor = std::pow(per_5mm, (thickness_m - t_ref) / 0.005);
    return std::fmin(1.0, factor);
}

}  // namespace iemisim
