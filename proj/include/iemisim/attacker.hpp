#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iemisim/common.hpp"
#include "iemisim/field.hpp"
#include "iemisim/locator.hpp"
#include "iemisim/pose.hpp"
#include "iemisim/rng.hpp"
#include "iemisim/screen.hpp"
#include "iemisim/susceptibility.hpp"

namespace iemisim {

enum class AntennaMode { monitor, attack, grounded, floating };

/// Needle/plate array under the tabletop. Positions are in antenna
/// coordinates; at most one antenna may be driven at any instant.
struct AntennaArray {
    std::vector<Vec2> positions;
    std::vector<AntennaMode> modes;
    double extent_x_m = 0.24;
    double extent_y_m = 0.17;
    double spacing_m = 0.01;
    double coverage_radius_m = 0.02;

    static AntennaArray grid(double extent_x, double extent_y, double spacing) {
        if (!(spacing > 0)) throw std::invalid_argument("spacing must be > 0");
        AntennaArray a;
        a.extent_x_m = extent_x;
        a.extent_y_m = extent_y;
        a.spacing_m = spacing;
        a.coverage_radius_m = 2.0 * spacing;
        const int nx = static_cast<int>(extent_x / spacing) + 1;
        const int ny = static_cast<int>(extent_y / spacing) + 1;
        a.positions.reserve(static_cast<std::size_t>(nx) * ny);
        for (int iy = 0; iy < ny; ++iy)
            for (int ix = 0; ix < nx; ++ix)
                a.positions.push_back({ix * spacing, iy * spacing});
        a.modes.assign(a.positions.size(), AntennaMode::monitor);
        return a;
    }

    void set_attack(std::size_t index) {
        for (auto& m : modes)
            if (m == AntennaMode::attack) m = AntennaMode::grounded;
        modes.at(index) = AntennaMode::attack;
    }
};

/// Index of the antenna whose screen-mapped position is closest to the
/// target. Throws CoverageGap when even the closest one is out of reach.
inline std::size_t select_antenna(const AntennaArray& array, const ScreenPose& pose,
                                  const Vec2& target_screen) {
    if (array.positions.empty()) throw std::invalid_argument("empty antenna array");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < array.positions.size(); ++i) {
        const double d = distance(pose.to_screen(array.positions[i]), target_screen);
        if (d < best_d) { best_d = d; best = i; }
    }
    if (best_d > array.coverage_radius_m)
        throw CoverageGap("target lies " + format_double(best_d) +
                          " m from the nearest antenna, beyond coverage");
    return best;
}

enum class GestureKind { short_tap, long_press, swipe };

struct GestureSpec {
    GestureKind kind = GestureKind::short_tap;
    std::vector<Vec2> path;  ///< screen coordinates; single point for tap/press
    double duration_s = 0.1;

    void validate() const {
        if (path.empty()) throw std::invalid_argument("gesture path is empty");
        if (kind == GestureKind::swipe && path.size() < 2)
            throw std::invalid_argument("swipe needs at least two waypoints");
        if (!(duration_s > 0)) throw std::invalid_argument("gesture duration must be > 0");
    }
};

inline constexpr double k_tap_duration_s = 0.1;
inline constexpr double k_long_press_min_s = 0.5;   ///< host boundary tap vs press
inline constexpr double k_swipe_dwell_s = 0.05;

struct AttackStep {
    std::size_t antenna_index = 0;
    NoiseInput noise;
    double start_s = 0.0;
    double duration_s = 0.0;
    Vec2 intended_screen;
    bool checkpoint = true;  ///< query the detector after this step
};

struct AttackPlan {
    std::vector<AttackStep> steps;
    int max_retries = 2;
    GestureKind kind = GestureKind::short_tap;
};

/// Reference device entry: attack frequency / field strength plus the
/// published outcome columns, kept as references.
struct DeviceProfile {
    std::string name;
    std::string os;
    double attack_frequency_hz = 140e3;
    double field_v_per_m = 1500.0;
    DrivingMethod driving = DrivingMethod::pdm;
    double success_rate_ref = 0.0;
    double qd_x_ref_px = 0.0;
    double qd_y_ref_px = 0.0;
    SensorParams sensor = reference_sensor_params();
};

/// CSV: name,os,frequency_khz,field_v_per_m,driving,success_rate,qd_x_px,qd_y_px
inline std::vector<DeviceProfile> load_device_profiles(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open device profiles: " + path);
    std::vector<DeviceProfile> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) { header = false; continue; }
        std::istringstream ss(line);
        DeviceProfile d;
        std::string field;
        std::getline(ss, d.name, ',');
        std::getline(ss, d.os, ',');
        std::getline(ss, field, ',');
        d.attack_frequency_hz = std::stod(field) * 1e3;
        std::getline(ss, field, ',');
        d.field_v_per_m = std::stod(field);
        std::getline(ss, field, ',');
        d.driving = field == "SDM" ? DrivingMethod::sdm : DrivingMethod::pdm;
        std::getline(ss, field, ',');
        d.success_rate_ref = std::stod(field);
        std::getline(ss, field, ',');
        d.qd_x_ref_px = std::stod(field);
        std::getline(ss, field, ',');
        d.qd_y_ref_px = std::stod(field);
        out.push_back(std::move(d));
    }
    if (out.empty()) throw std::runtime_error("device profile table is empty: " + path);
    return out;
}

/// Expands a gesture into timed antenna activations. Swipes are resampled
/// along the path finely enough that consecutive activations come from
/// adjacent antennas, keeping the synthetic contact continuous.
inline AttackPlan plan_gesture(const GestureSpec& g, const DeviceProfile& profile,
                               const ScreenPose& pose, const AntennaArray& array) {
    g.validate();
    if (g.kind == GestureKind::long_press && g.duration_s <= k_tap_duration_s)
        throw std::invalid_argument("long press must last longer than a tap");
    AttackPlan plan;
    plan.kind = g.kind;

    NoiseInput noise;
    noise.f_e_hz = profile.attack_frequency_hz;
    noise.phi0_rad = 0.0;
    noise.v_n_v = 0.0;  // amplitude comes from the footprint at execution time

    auto add_step = [&](const Vec2& target, double start, double dur) {
        AttackStep step;
        step.antenna_index = select_antenna(array, pose, target);
        step.noise = noise;
        step.start_s = start;
        step.duration_s = dur;
        step.intended_screen = target;
        plan.steps.push_back(step);
    };

    switch (g.kind) {
        case GestureKind::short_tap:
            add_step(g.path.front(), 0.0, k_tap_duration_s);
            break;
        case GestureKind::long_press:
            add_step(g.path.front(), 0.0, g.duration_s);
            break;
        case GestureKind::swipe: {
            double t = 0.0;
            for (std::size_t seg = 0; seg + 1 < g.path.size(); ++seg) {
                const Vec2 a = g.path[seg], b = g.path[seg + 1];
                const double len = distance(a, b);
                // one-node overlap: sample at half the antenna spacing
                const int n = std::max(1, static_cast<int>(std::ceil(len / (array.spacing_m * 0.5))));
                for (int i = (seg == 0 ? 0 : 1); i <= n; ++i) {
                    const double u = static_cast<double>(i) / n;
                    const Vec2 tgt{a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
                    const std::size_t idx = select_antenna(array, pose, tgt);
                    if (distance(pose.to_screen(array.positions[idx]), tgt) >
                        array.spacing_m + 1e-12)
                        throw CoverageGap("swipe waypoint not reachable by an adjacent antenna");
                    if (plan.steps.empty() || idx != plan.steps.back().antenna_index) {
                        add_step(tgt, t, k_swipe_dwell_s);
                        t += k_swipe_dwell_s;
                    } else {
                        plan.steps.back().duration_s += k_swipe_dwell_s;
                        t += k_swipe_dwell_s;
                    }
                }
            }
            // Only the final step needs a detector checkpoint mid-swipe.
            for (std::size_t i = 0; i + 1 < plan.steps.size(); ++i)
                plan.steps[i].checkpoint = false;
            break;
        }
    }

    // A step whose mapped antenna sits farther than the array spacing from
    // its waypoint would break the contact path.
    for (const auto& step : plan.steps) {
        const Vec2 mapped = pose.to_screen(array.positions[step.antenna_index]);
        if (distance(mapped, step.intended_screen) > array.spacing_m + 1e-12)
            throw CoverageGap("planned antenna deviates from the gesture path");
    }
    return plan;
}

enum class InjectionOutcome { registered, rejected, none, indeterminate };

inline const char* to_string(InjectionOutcome o) {
    switch (o) {
        case InjectionOutcome::registered: return "registered";
        case InjectionOutcome::rejected: return "rejected";
        case InjectionOutcome::none: return "none";
        case InjectionOutcome::indeterminate: return "indeterminate";
    }
    return "?";
}

inline constexpr double k_dwell_guard_s = 0.010;

/// Classifies the previous injection attempt from the observed full-scan
/// dwell. A dwell inside the guard band around the decision boundary is
/// indeterminate and should trigger a retry.
inline InjectionOutcome detect_injection(std::optional<double> observed_dwell_s,
                                         const ScanModeConfig& cfg) {
    cfg.validate();
    if (!observed_dwell_s) return InjectionOutcome::none;
    const double boundary = 0.5 * (cfg.dwell_registered_s + cfg.dwell_rejected_s);
    if (std::fabs(*observed_dwell_s - boundary) <= k_dwell_guard_s)
        return InjectionOutcome::indeterminate;
    return *observed_dwell_s > boundary ? InjectionOutcome::registered
                                        : InjectionOutcome::rejected;
}

/// Drives the scan-mode machine through one injection episode and returns
/// the dwell the monitoring antenna would measure (time from the last touch
/// event to the fall back to reduced scan). nullopt when the controller
/// never entered full scan.
inline std::optional<double> observe_episode_dwell(ScanEvent event_kind, double event_time_s,
                                                   double dwell_jitter_s,
                                                   const ScanModeConfig& cfg) {
    ScanMode mode;
    mode = step_scan_mode(mode, ScanEvent::none, 0.0, cfg);
    if (event_kind == ScanEvent::none) {
        mode = step_scan_mode(mode, ScanEvent::none, event_time_s + 1.0, cfg);
        return std::nullopt;
    }
    mode = step_scan_mode(mode, event_kind, event_time_s, cfg);
    // the controller's own timing is not exact; jitter shifts the fallback
    mode.active_dwell_s = std::fmax(0.0, mode.active_dwell_s + dwell_jitter_s);
    const double step = 1e-3;  // monitoring resolution
    double t = event_time_s;
    while (mode.state == ScanMode::State::full) {
        t += step;
        mode = step_scan_mode(mode, ScanEvent::none, t, cfg);
        if (t > event_time_s + 10.0) break;
    }
    return t - event_time_s;
}

struct DetectionEpisode {
    ScanEvent truth = ScanEvent::none;
    std::optional<double> dwell_s;
    InjectionOutcome classified = InjectionOutcome::none;
    bool correct = false;
};

/// Seeded batch of injection episodes for exercising the detector.
inline std::vector<DetectionEpisode> run_detection_episodes(int count, std::uint64_t seed,
                                                            const ScanModeConfig& cfg) {
    cfg.validate();
    if (count < 1) throw std::invalid_argument("episode count must be >= 1");
    SplitRng root(seed);
    std::vector<DetectionEpisode> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        SplitRng rng = root.split(i + 1);
        DetectionEpisode ep;
        const auto pick = rng.uniform_index(3);
        ep.truth = pick == 0 ? ScanEvent::none
                             : (pick == 1 ? ScanEvent::touch_rejected
                                          : ScanEvent::touch_registered);
        const double jitter = std::clamp(rng.normal(0.0, 0.015), -0.045, 0.045);
        ep.dwell_s = observe_episode_dwell(ep.truth, 0.5, jitter, cfg);
        ep.classified = detect_injection(ep.dwell_s, cfg);
        switch (ep.truth) {
            case ScanEvent::none:
                ep.correct = ep.classified == InjectionOutcome::none;
                break;
            case ScanEvent::touch_rejected:
                ep.correct = ep.classified == InjectionOutcome::rejected;
                break;
            case ScanEvent::touch_registered:
                ep.correct = ep.classified == InjectionOutcome::registered;
                break;
        }
        out.push_back(ep);
    }
    return out;
}

/// Inclusive (linear-interpolation) quantile of a sorted sample.
inline double quantile_inclusive(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Quartile deviation: half the interquartile range.
inline double quartile_deviation(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return 0.5 * (quantile_inclusive(values, 0.75) - quantile_inclusive(values, 0.25));
}

struct AttemptRecord {
    int trial = 0;
    Vec2 intended_screen;
    bool touch_detected = false;
    Vec2 detected_screen;
    InjectionOutcome outcome = InjectionOutcome::none;
    bool success = false;
    double elapsed_s = 0.0;
    int retries = 0;
};

struct InjectionReport {
    std::vector<AttemptRecord> attempts;
    double success_rate = 0.0;
    double qd_x_px = 0.0;
    double qd_y_px = 0.0;
};

struct CampaignConfig {
    int trials = 50;
    std::uint64_t seed = 1;
    Vec2 target_screen;               ///< tap target, screen coordinates
    double field_v_per_m = 0.0;       ///< 0 = use the profile value
    double footprint_radius_m = 0.002;
    double amplitude_jitter_sigma = 0.0;   ///< relative field jitter per trial
    double position_jitter_sigma_m = 0.0;  ///< antenna placement jitter per trial
    double coupling_factor = 1.0;          ///< tabletop attenuation multiplier
    double pose_max_rotation_rad = k_pi;
    double pose_max_translation_m = 0.02;
    int max_retries = 2;  ///< re-injections after an indeterminate dwell
};

/// Optional locate stage for campaigns: when supplied, each trial first
/// infers the pose from emission traces captured at the monitor antennas
/// instead of using the true pose.
struct LocatorContext {
    LineClassifier classifier;
    LocateOptions options;
    std::vector<Vec2> monitor_positions;  ///< antenna coordinates
    double sample_rate_hz = 2e6;
    double capture_duration_s = 0.0;  ///< 0 = one frame plus lead-in
    EmissionOptions emission;
};

namespace detail {

/// Host-side acceptance: the gesture recognizer registers a touch only if
/// the interference frequency lands on a predicted peak frequency of the
/// sensor and at least one node actually fired.
inline bool host_accepts(const SensorParams& sensor, double f_e_hz, bool any_node_fired) {
    if (!any_node_fired) return false;
    const auto sets = predict_frequency_sets(sensor.f_sw_hz, sensor.d_s,
                                             std::fmax(1.0, f_e_hz * 0.5),
                                             std::fmin(10e6, f_e_hz * 1.5 + 1.0));
    for (double f : sets.f_emax_hz)
        if (nearly_equal(f, f_e_hz, 1e-6)) return true;
    return false;
}

}  // namespace detail

/// Closed-loop tap campaign against one simulated screen. Each trial draws
/// a fresh screen pose, locates it (true pose, or through the locator when
/// a LocatorContext is given), selects the closest antenna, injects, and
/// reads the outcome back through the scan-mode dwell. Deterministic in the
/// seed.
inline InjectionReport execute_campaign(const CampaignConfig& cfg, ScreenModel model,
                                        const DeviceProfile& profile, const AntennaArray& array,
                                        const LocatorContext* locator = nullptr) {
    model.validate();
    if (cfg.trials < 1) throw std::invalid_argument("trials must be >= 1");
    SplitRng root(cfg.seed);

    InjectionReport report;
    report.attempts.reserve(cfg.trials);
    std::vector<double> xs_px, ys_px;

    const double base_field =
        (cfg.field_v_per_m > 0.0 ? cfg.field_v_per_m : profile.field_v_per_m) *
        cfg.coupling_factor;

    for (int trial = 0; trial < cfg.trials; ++trial) {
        SplitRng rng = root.split(static_cast<std::uint64_t>(trial) + 1);

        // Fresh placement: the screen center lands at the array center plus
        // jitter, rotated by a random angle. Rejection-sample as a safety
        // net so the target stays in coverage.
        ScreenPose pose;
        for (int attempt = 0; attempt < 64; ++attempt) {
            pose.theta_rad = rng.uniform(-cfg.pose_max_rotation_rad, cfg.pose_max_rotation_rad);
            const Vec2 anchor{
                0.5 * array.extent_x_m +
                    rng.uniform(-cfg.pose_max_translation_m, cfg.pose_max_translation_m),
                0.5 * array.extent_y_m +
                    rng.uniform(-cfg.pose_max_translation_m, cfg.pose_max_translation_m)};
            const double cth = std::cos(pose.theta_rad), sth = std::sin(pose.theta_rad);
            pose.x_t_m = 0.5 * model.width_m() - (cth * anchor.x - sth * anchor.y);
            pose.y_t_m = 0.5 * model.height_m() - (sth * anchor.x + cth * anchor.y);
            bool covered = true;
            try {
                select_antenna(array, pose, cfg.target_screen);
            } catch (const CoverageGap&) {
                covered = false;
            }
            if (covered) break;
        }
        model.pose = pose;

        AttemptRecord rec;
        rec.trial = trial;
        rec.intended_screen = cfg.target_screen;

        // Sensing stage: the pose the attacker acts on.
        ScreenPose acted_pose = pose;
        bool located = true;
        if (locator) {
            try {
                std::vector<EmissionTrace> traces;
                traces.reserve(locator->monitor_positions.size());
                const DrivingScheme& d = model.driving;
                const double frame_s = d.method == DrivingMethod::pdm
                                           ? d.code_length * d.bit_duration_s
                                           : model.rows * d.slot_duration_s;
                const double dur = locator->capture_duration_s > 0.0
                                       ? locator->capture_duration_s
                                       : locator->emission.lead_in_s + 1.5 * frame_s;
                for (std::size_t mi = 0; mi < locator->monitor_positions.size(); ++mi) {
                    SplitRng trace_rng = rng.split(fnv1a64("monitor-trace") + mi);
                    traces.push_back(emission_trace(model, locator->monitor_positions[mi],
                                                    locator->sample_rate_hz, dur,
                                                    locator->emission, &trace_rng));
                }
                acted_pose = locate_screen(traces, locator->classifier, locator->options).pose;
            } catch (const LocateFailure&) {
                located = false;
            }
        }

        InjectionOutcome outcome = located ? InjectionOutcome::indeterminate
                                           : InjectionOutcome::none;
        int retries = 0;
        AntennaArray rig = array;
        for (; located && retries <= cfg.max_retries &&
               outcome == InjectionOutcome::indeterminate;
             ++retries) {
            std::size_t antenna = 0;
            try {
                antenna = select_antenna(rig, acted_pose, cfg.target_screen);
            } catch (const CoverageGap&) {
                outcome = InjectionOutcome::none;
                break;
            }
            rig.set_attack(antenna);  // exactly one driven antenna at a time

            IemiFootprint fp;
            fp.center_antenna = rig.positions[antenna];
            if (cfg.position_jitter_sigma_m > 0.0) {
                fp.center_antenna.x += rng.normal(0.0, cfg.position_jitter_sigma_m);
                fp.center_antenna.y += rng.normal(0.0, cfg.position_jitter_sigma_m);
            }
            fp.profile = IemiFootprint::Profile::disc;
            fp.radius_m = cfg.footprint_radius_m;
            double field = base_field;
            if (cfg.amplitude_jitter_sigma > 0.0)
                field *= 1.0 + rng.normal(0.0, cfg.amplitude_jitter_sigma);
            fp.peak_e_v_per_m = std::fmax(0.0, field);
            fp.source.f_e_hz = profile.attack_frequency_hz;
            fp.source.phi0_rad = 0.0;
            fp.source.v_n_v = 0.0;  // the footprint field sets the per-node amplitude

            const TouchFrame frame = scan_frame(model, {}, {fp}, trial, trial * 0.1);
            const bool fired = !frame.touches.empty();
            if (fired) {
                rec.touch_detected = true;
                rec.detected_screen = frame.touches.front().centroid;
            }
            const bool registered =
                detail::host_accepts(model.sensor, profile.attack_frequency_hz, fired);

            // Controller dwell reveals the host decision to the monitoring
            // antenna; a small timing jitter keeps the detector honest.
            std::optional<double> dwell;
            if (fired) {
                const double base = registered ? model.scan.dwell_registered_s
                                               : model.scan.dwell_rejected_s;
                const double jitter =
                    std::clamp(rng.normal(0.0, 0.015), -0.045, 0.045);
                dwell = std::fmax(0.0, base + jitter);
            }
            outcome = detect_injection(dwell, model.scan);
        }
        rec.retries = retries > 0 ? retries - 1 : 0;
        rec.outcome = outcome;
        rec.elapsed_s = (rec.retries + 1) * k_tap_duration_s;
        rec.success = outcome == InjectionOutcome::registered && rec.touch_detected &&
                      distance(rec.detected_screen, cfg.target_screen) <= model.pitch_m + 1e-12;
        if (rec.success) {
            xs_px.push_back(rec.detected_screen.x * model.pixels_per_m);
            ys_px.push_back(rec.detected_screen.y * model.pixels_per_m);
        }
        report.attempts.push_back(rec);
    }

    int successes = 0;
    for (const auto& a : report.attempts) successes += a.success ? 1 : 0;
    report.success_rate = static_cast<double>(successes) / cfg.trials;
    if (!xs_px.empty()) {
        report.qd_x_px = quartile_deviation(xs_px);
        report.qd_y_px = quartile_deviation(ys_px);
    }
    return report;
}

}  // namespace iemisim
