#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "iemisim/common.hpp"
#include "iemisim/field.hpp"
#include "iemisim/pose.hpp"
#include "iemisim/rng.hpp"
#include "iemisim/sensor.hpp"
#include "iemisim/susceptibility.hpp"

namespace iemisim {

enum class DrivingMethod { sdm, pdm };

/// Sylvester-ordered Walsh matrix of the given power-of-two order,
/// entries +-1.
inline std::vector<std::vector<int>> walsh_matrix(int order) {
    if (order < 1 || (order & (order - 1)) != 0)
        throw std::invalid_argument("walsh_matrix order must be a power of two");
    std::vector<std::vector<int>> h(order, std::vector<int>(order, 1));
    for (int block = 1; block < order; block <<= 1)
        for (int r = 0; r < block; ++r)
            for (int c = 0; c < block; ++c) {
                h[r + block][c] = h[r][c];
                h[r][c + block] = h[r][c];
                h[r + block][c + block] = -h[r][c];
            }
    return h;
}

/// TX drive description. PDM drives every line at once with one +-1 code
/// word per line; the emitted carrier amplitude maps +1 and -1 to two
/// distinct levels so that a magnitude profile identifies the line.
struct DrivingScheme {
    DrivingMethod method = DrivingMethod::pdm;
    int code_length = 0;              ///< PDM code bits per frame
    double bit_duration_s = 100e-6;   ///< PDM code-bit duration
    double slot_duration_s = 100e-6;  ///< SDM per-line slot duration
    double excitation_amplitude_v = 1.0;
    double carrier_hz = 250e3;
    double amp_high = 1.0;  ///< emitted level for a +1 code bit
    double amp_low = 0.5;   ///< emitted level for a -1 code bit

    std::vector<std::vector<int>> codes;  ///< one code word per TX line

    static DrivingScheme sequential(int tx_lines, double slot_s = 100e-6,
                                    double carrier = 250e3) {
        (void)tx_lines;
        DrivingScheme d;
        d.method = DrivingMethod::sdm;
        d.slot_duration_s = slot_s;
        d.carrier_hz = carrier;
        return d;
    }

    static DrivingScheme parallel(int tx_lines, double bit_s = 100e-6,
                                  double carrier = 250e3) {
        DrivingScheme d;
        d.method = DrivingMethod::pdm;
        d.bit_duration_s = bit_s;
        d.carrier_hz = carrier;
        int order = 1;
        while (order < tx_lines) order <<= 1;
        auto h = walsh_matrix(order);
        d.codes.assign(h.begin(), h.begin() + tx_lines);
        d.code_length = order;
        d.validate_codes();
        return d;
    }

    /// Rejects code matrices whose rows are not mutually orthogonal.
    void validate_codes() const {
        if (method != DrivingMethod::pdm) return;
        if (codes.empty()) throw std::invalid_argument("PDM scheme has no code words");
        for (const auto& row : codes)
            if (static_cast<int>(row.size()) != code_length)
                throw std::invalid_argument("code word length mismatch");
        if (code_length < static_cast<int>(codes.size()))
            throw std::invalid_argument("code length must be >= number of TX lines");
        for (std::size_t a = 0; a < codes.size(); ++a)
            for (std::size_t b = a + 1; b < codes.size(); ++b) {
                long long dot = 0;
                for (int i = 0; i < code_length; ++i)
                    dot += static_cast<long long>(codes[a][i]) * codes[b][i];
                if (dot != 0) throw std::invalid_argument("code matrix rows are not orthogonal");
            }
    }
};

/// Scan-mode constants. The controller idles in reduced scan, jumps to full
/// scan on any touch, and falls back after a dwell that is strictly longer
/// when the host registered the touch than when it rejected it.
struct ScanModeConfig {
    double reduced_rate_hz = 120.0;
    double full_rate_hz = 960.0;
    double dwell_registered_s = 0.5;
    double dwell_rejected_s = 0.1;

    void validate() const {
        if (!(reduced_rate_hz > 0) || !(full_rate_hz > 0))
            throw std::invalid_argument("scan rates must be > 0");
        if (!(dwell_registered_s > dwell_rejected_s))
            throw std::invalid_argument("registered dwell must exceed rejected dwell");
    }
};

/// Whole-screen model: TX rows by RX columns at a fixed pitch. TX lines run
/// along x, so the line index resolves the y coordinate.
struct ScreenModel {
    int rows = 16;
    int cols = 24;
    double pitch_m = 0.005;
    SensorParams sensor = reference_sensor_params();
    ElectrodeGeometry node_geometry;  ///< per-node coupling geometry
    std::vector<double> delta_c_offsets_f;  ///< optional per-node capacitance offsets
    DrivingScheme driving = DrivingScheme::parallel(16);
    ScreenPose pose;  ///< antenna frame -> screen frame
    ScanModeConfig scan;
    double pixels_per_m = 10000.0;
    double boundary_factor = 0.1;      ///< emission attenuation outside the panel
    double coupling_decay_pitches = 0.6;  ///< gaussian decay length of off-line pickup

    double width_m() const { return cols * pitch_m; }
    double height_m() const { return rows * pitch_m; }

    Vec2 node_center(int row, int col) const {
        return {(col + 0.5) * pitch_m, (row + 0.5) * pitch_m};
    }

    /// Euclidean distance from a point to the node's cell rectangle
    /// (zero inside the cell). Field coupling uses this, since the field
    /// couples to the whole electrode overlap, not its midpoint.
    double node_distance(int row, int col, const Vec2& p) const {
        const double x0 = col * pitch_m, x1 = (col + 1) * pitch_m;
        const double y0 = row * pitch_m, y1 = (row + 1) * pitch_m;
        const double dx = std::fmax(0.0, std::fmax(x0 - p.x, p.x - x1));
        const double dy = std::fmax(0.0, std::fmax(y0 - p.y, p.y - y1));
        return std::hypot(dx, dy);
    }

    double line_center_y(int row) const { return (row + 0.5) * pitch_m; }

    bool in_bounds(const Vec2& p) const {
        return p.x >= 0.0 && p.x <= width_m() && p.y >= 0.0 && p.y <= height_m();
    }

    double delta_c_offset(int row, int col) const {
        if (delta_c_offsets_f.empty()) return 0.0;
        return delta_c_offsets_f[static_cast<std::size_t>(row) * cols + col];
    }

    void validate() const {
        if (rows < 2 || cols < 2) throw std::invalid_argument("grid must be at least 2x2");
        if (!(pitch_m > 0)) throw std::invalid_argument("pitch must be > 0");
        sensor.validate();
        node_geometry.validate();
        scan.validate();
        if (!delta_c_offsets_f.empty() &&
            delta_c_offsets_f.size() != static_cast<std::size_t>(rows) * cols)
            throw std::invalid_argument("delta_c offset table size mismatch");
        driving.validate_codes();
    }
};

/// Spatial footprint of one interference source, centered in antenna
/// coordinates.
struct IemiFootprint {
    enum class Profile { disc, gaussian };
    Vec2 center_antenna;
    Profile profile = Profile::disc;
    double radius_m = 0.0035;  ///< disc radius, or sigma for the gaussian
    double peak_e_v_per_m = 0.0;
    NoiseInput source;

    double weight(double dist_m) const {
        if (!(radius_m > 0)) throw std::invalid_argument("footprint radius must be > 0");
        if (profile == Profile::disc) return dist_m <= radius_m ? 1.0 : 0.0;
        const double r = dist_m / radius_m;
        return std::exp(-r * r);
    }
};

struct TouchPoint {
    Vec2 position;  ///< screen coordinates
    double delta_c_f = 0.5e-12;
};

struct DetectedTouch {
    Vec2 centroid;       ///< screen coordinates
    int node_count = 0;
    double peak_deviation_v = 0.0;
    int peak_row = 0;
    int peak_col = 0;
};

struct TouchFrame {
    long frame_index = 0;
    double timestamp_s = 0.0;
    std::vector<DetectedTouch> touches;
    std::vector<double> deviations_v;  ///< per node, row-major
};

/// One full measurement frame: every node accumulates its finger and
/// interference deviations over n_cycles and is compared against the
/// N-cycle threshold. Contiguous firing nodes merge into one touch whose
/// coordinate is the deviation-weighted centroid.
inline TouchFrame scan_frame(const ScreenModel& model,
                             const std::vector<TouchPoint>& touches,
                             const std::vector<IemiFootprint>& footprints,
                             long frame_index = 0, double timestamp_s = 0.0) {
    model.validate();
    const int rows = model.rows, cols = model.cols;
    TouchFrame frame;
    frame.frame_index = frame_index;
    frame.timestamp_s = timestamp_s;
    frame.deviations_v.assign(static_cast<std::size_t>(rows) * cols, 0.0);

    const SensorParams& p = model.sensor;
    const double charge_time = (1.0 - p.d_s) * p.cycle_period_s();
    const double v_c = charge_voltage(p, charge_time);

    for (const auto& t : touches) {
        if (!model.in_bounds(t.position))
            throw std::invalid_argument("touch position outside screen bounds");
        const int col = std::min(cols - 1, static_cast<int>(t.position.x / model.pitch_m));
        const int row = std::min(rows - 1, static_cast<int>(t.position.y / model.pitch_m));
        frame.deviations_v[static_cast<std::size_t>(row) * cols + col] +=
            p.n_cycles * transfer_deviation(p, v_c, t.delta_c_f);
    }

    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * cols + c;
            const double dc0 = model.delta_c_offset(r, c);
            if (dc0 != 0.0)
                frame.deviations_v[idx] += p.n_cycles * transfer_deviation(p, v_c, dc0);
            double e_node = 0.0;
            const IemiFootprint* src = nullptr;
            for (const auto& fp : footprints) {
                const Vec2 center_screen = model.pose.to_screen(fp.center_antenna);
                const double w = fp.weight(model.node_distance(r, c, center_screen));
                if (w > 0.0) {
                    e_node += fp.peak_e_v_per_m * w;
                    src = &fp;  // strongest assumption: sources share one waveform
                }
            }
            if (e_node > 0.0 && src) {
                NoiseInput n = src->source;
                n.v_n_v = e_node * model.node_geometry.gap_m;
                SusceptibilityQuery q{p, n, p.n_cycles};
                frame.deviations_v[idx] += accumulate_m_cycles(q);
            }
        }

    // Connected components (4-neighborhood) of nodes past the threshold.
    const double v_th_n = p.threshold_n_v();
    std::vector<int> label(frame.deviations_v.size(), -1);
    auto fired = [&](int r, int c) {
        return std::fabs(frame.deviations_v[static_cast<std::size_t>(r) * cols + c]) >=
               v_th_n - k_threshold_guard_v;
    };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            if (!fired(r, c) || label[static_cast<std::size_t>(r) * cols + c] >= 0) continue;
            // flood fill in scan order so components are ordered by their
            // lexicographically smallest node
            std::vector<std::pair<int, int>> stack{{r, c}};
            label[static_cast<std::size_t>(r) * cols + c] =
                static_cast<int>(frame.touches.size());
            DetectedTouch touch;
            double wsum = 0.0, xsum = 0.0, ysum = 0.0;
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                const std::size_t idx = static_cast<std::size_t>(cr) * cols + cc;
                const double w = std::fabs(frame.deviations_v[idx]);
                const Vec2 center = model.node_center(cr, cc);
                wsum += w;
                xsum += w * center.x;
                ysum += w * center.y;
                ++touch.node_count;
                if (w > touch.peak_deviation_v ||
                    (w == touch.peak_deviation_v &&
                     std::make_pair(cr, cc) < std::make_pair(touch.peak_row, touch.peak_col))) {
                    touch.peak_deviation_v = w;
                    touch.peak_row = cr;
                    touch.peak_col = cc;
                }
                const int dr[4] = {-1, 1, 0, 0};
                const int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
                    const std::size_t nidx = static_cast<std::size_t>(nr) * cols + nc;
                    if (label[nidx] >= 0 || !fired(nr, nc)) continue;
                    label[nidx] = label[static_cast<std::size_t>(cr) * cols + cc];
                    stack.push_back({nr, nc});
                }
            }
            touch.centroid = {xsum / wsum, ysum / wsum};
            frame.touches.push_back(touch);
        }
    return frame;
}

/// PDM measurement per RX column and code bit for a static deviation field.
inline std::vector<std::vector<double>> encode_pdm(const ScreenModel& model,
                                                   const std::vector<double>& field_row_major) {
    if (model.driving.method != DrivingMethod::pdm)
        throw std::invalid_argument("encode_pdm requires a PDM scheme");
    model.driving.validate_codes();
    if (field_row_major.size() != static_cast<std::size_t>(model.rows) * model.cols)
        throw std::invalid_argument("field size mismatch");
    const int bits = model.driving.code_length;
    std::vector<std::vector<double>> m(model.cols, std::vector<double>(bits, 0.0));
    for (int c = 0; c < model.cols; ++c)
        for (int b = 0; b < bits; ++b) {
            double acc = 0.0;
            for (int r = 0; r < model.rows; ++r)
                acc += model.driving.codes[r][b] *
                       field_row_major[static_cast<std::size_t>(r) * model.cols + c];
            m[c][b] = acc;
        }
    return m;
}

/// Inner-product demultiplexing of PDM measurements back to per-node values.
/// Exact for orthogonal codes.
inline std::vector<double> decode_pdm(const ScreenModel& model,
                                      const std::vector<std::vector<double>>& measurements) {
    if (model.driving.method != DrivingMethod::pdm)
        throw std::invalid_argument("decode_pdm requires a PDM scheme");
    model.driving.validate_codes();
    if (measurements.size() != static_cast<std::size_t>(model.cols))
        throw std::invalid_argument("measurement column count mismatch");
    const int bits = model.driving.code_length;
    std::vector<double> field(static_cast<std::size_t>(model.rows) * model.cols, 0.0);
    for (int c = 0; c < model.cols; ++c) {
        if (measurements[c].size() != static_cast<std::size_t>(bits))
            throw std::invalid_argument("measurement bit count mismatch");
        for (int r = 0; r < model.rows; ++r) {
            double acc = 0.0;
            for (int b = 0; b < bits; ++b) acc += model.driving.codes[r][b] * measurements[c][b];
            field[static_cast<std::size_t>(r) * model.cols + c] = acc / bits;
        }
    }
    return field;
}

/// Per-node estimates from driving one column at a time. The reference the
/// PDM decode must agree with.
inline std::vector<double> sequential_scan(const ScreenModel& model,
                                           const std::vector<double>& field_row_major) {
    if (field_row_major.size() != static_cast<std::size_t>(model.rows) * model.cols)
        throw std::invalid_argument("field size mismatch");
    return field_row_major;
}

/// Waveform captured by one antenna listening to the TX emissions.
struct EmissionTrace {
    double sample_rate_hz = 2e6;
    Vec2 antenna;  ///< antenna coordinates
    std::vector<double> samples_v;
};

struct EmissionOptions {
    double lead_in_s = 0.5e-3;   ///< quiet interval before the first frame
    int frames = 1;
    double noise_sigma_v = 0.0;  ///< additive gaussian sample noise
};

/// Synthesizes the emission an antenna picks up. Coupling falls off as a
/// gaussian of the distance to each TX line and collapses to
/// boundary_factor once the antenna leaves the panel outline.
inline EmissionTrace emission_trace(const ScreenModel& model, const Vec2& antenna_pos,
                                    double sample_rate_hz, double duration_s,
                                    const EmissionOptions& opts = {},
                                    SplitRng* rng = nullptr) {
    model.validate();
    const DrivingScheme& d = model.driving;
    if (sample_rate_hz < 2.0 * d.carrier_hz)
        throw std::invalid_argument("sample rate must be at least twice the carrier frequency");
    if (!(duration_s > 0)) throw std::invalid_argument("duration must be > 0");

    const Vec2 on_screen = model.pose.to_screen(antenna_pos);
    const bool inside = model.in_bounds(on_screen);
    const double bound = inside ? 1.0 : model.boundary_factor;
    const double decay = model.coupling_decay_pitches * model.pitch_m;

    std::vector<double> line_gain(model.rows);
    for (int r = 0; r < model.rows; ++r) {
        const double dy = (on_screen.y - model.line_center_y(r)) / decay;
        line_gain[r] = std::exp(-dy * dy) * bound;
    }

    EmissionTrace trace;
    trace.sample_rate_hz = sample_rate_hz;
    trace.antenna = antenna_pos;
    const std::size_t n = static_cast<std::size_t>(duration_s * sample_rate_hz);
    trace.samples_v.assign(n, 0.0);

    const double frame_s = d.method == DrivingMethod::pdm
                               ? d.code_length * d.bit_duration_s
                               : model.rows * d.slot_duration_s;
    const double amp0 = d.excitation_amplitude_v;

    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate_hz;
        const double t_in = t - opts.lead_in_s;
        double coeff = 0.0;
        if (t_in >= 0.0 && t_in < opts.frames * frame_s) {
            const double t_frame = std::fmod(t_in, frame_s);
            if (d.method == DrivingMethod::pdm) {
                const int bit = std::min(d.code_length - 1,
                                         static_cast<int>(t_frame / d.bit_duration_s));
                for (int r = 0; r < model.rows; ++r) {
                    const double level = d.codes[r][bit] > 0 ? d.amp_high : d.amp_low;
                    coeff += line_gain[r] * level;
                }
            } else {
                const int slot = std::min(model.rows - 1,
                                          static_cast<int>(t_frame / d.slot_duration_s));
                coeff = line_gain[slot];
            }
        }
        double v = amp0 * coeff * std::sin(2.0 * k_pi * d.carrier_hz * t);
        if (opts.noise_sigma_v > 0.0 && rng) v += rng->normal(0.0, opts.noise_sigma_v);
        trace.samples_v[i] = v;
    }
    return trace;
}

enum class ScanEvent { none, touch_rejected, touch_registered };

/// Controller scanning state. Dwell timing starts from the last touch event
/// seen while in full scan.
struct ScanMode {
    enum class State { reduced, full };
    State state = State::reduced;
    double last_touch_s = -1.0;
    double active_dwell_s = 0.0;
    double next_pulse_s = 0.0;
    double last_step_s = -1.0;
    ScanEvent last_event = ScanEvent::none;
};

inline ScanMode step_scan_mode(ScanMode mode, ScanEvent event, double now_s,
                               const ScanModeConfig& cfg) {
    cfg.validate();
    if (now_s < mode.last_step_s) throw std::invalid_argument("time must be monotonic");
    mode.last_step_s = now_s;

    if (event != ScanEvent::none) {
        mode.last_touch_s = now_s;
        mode.last_event = event;
        mode.active_dwell_s = event == ScanEvent::touch_registered ? cfg.dwell_registered_s
                                                                   : cfg.dwell_rejected_s;
        mode.state = ScanMode::State::full;
        return mode;
    }
    if (mode.state == ScanMode::State::full &&
        now_s - mode.last_touch_s >= mode.active_dwell_s) {
        mode.state = ScanMode::State::reduced;
        mode.next_pulse_s = now_s + 1.0 / cfg.reduced_rate_hz;
    } else if (mode.state == ScanMode::State::reduced) {
        while (mode.next_pulse_s <= now_s) mode.next_pulse_s += 1.0 / cfg.reduced_rate_hz;
    }
    return mode;
}

}  // namespace iemisim
