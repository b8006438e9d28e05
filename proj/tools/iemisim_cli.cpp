// Experiment harness: every analysis in the library behind config-driven,
// seed-deterministic subcommands. CSV output is comma/LF, JSON keeps stable
// key order, and every artifact embeds the hash of the effective config.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "iemisim/attacker.hpp"
#include "iemisim/common.hpp"
#include "iemisim/config.hpp"
#include "iemisim/field.hpp"
#include "iemisim/locator.hpp"
#include "iemisim/screen.hpp"
#include "iemisim/sensor.hpp"
#include "iemisim/susceptibility.hpp"
#include "iemisim/trace_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace iemisim;

namespace {

constexpr int k_exit_ok = 0;
constexpr int k_exit_failure = 1;  // domain failure (inference, locate, ...)
constexpr int k_exit_config = 2;   // bad config or arguments

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    out << content;
    if (!out) throw std::runtime_error("short write: " + path);
}

void write_json_file(const std::string& path, const ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

SensorParams sensor_from_config(const Config& cfg, const std::string& section = "sensor") {
    SensorParams p = reference_sensor_params();
    auto key = [&](const char* k) { return section + "." + k; };
    p.v_in_v = cfg.get_double(key("v_in_v"), p.v_in_v);
    p.r_in_ohm = cfg.get_double(key("r_in_ohm"), p.r_in_ohm);
    p.r_s_ohm = cfg.get_double(key("r_s_ohm"), p.r_s_ohm);
    p.c_m_f = cfg.get_double(key("c_m_f"), p.c_m_f);
    p.c_s_f = cfg.get_double(key("c_s_f"), p.c_s_f);
    p.delta_c_f = cfg.get_double(key("delta_c_f"), p.delta_c_f);
    p.v_th_v = cfg.get_double(key("v_th_v"), p.v_th_v);
    if (cfg.has(key("v_th_n_v"))) p.v_th_n_v = cfg.get_double(key("v_th_n_v"));
    p.f_sw_hz = cfg.get_double(key("f_sw_hz"), p.f_sw_hz);
    p.d_s = cfg.get_double(key("d_s"), p.d_s);
    p.n_cycles = static_cast<int>(cfg.get_u64(key("n_cycles"), p.n_cycles));
    p.validate();
    return p;
}

ElectrodeGeometry geometry_from_config(const Config& cfg) {
    ElectrodeGeometry g;
    g.area_m2 = cfg.get_double("geometry.area_m2", g.area_m2);
    g.gap_m = cfg.get_double("geometry.gap_m", g.gap_m);
    g.epsilon_r = cfg.get_double("geometry.epsilon_r", g.epsilon_r);
    g.validate();
    return g;
}

ScreenModel screen_from_config(const Config& cfg) {
    ScreenModel m;
    m.rows = static_cast<int>(cfg.get_u64("screen.rows", m.rows));
    m.cols = static_cast<int>(cfg.get_u64("screen.cols", m.cols));
    m.pitch_m = cfg.get_double("screen.pitch_m", m.pitch_m);
    m.pixels_per_m = cfg.get_double("screen.pixels_per_m", m.pixels_per_m);
    m.boundary_factor = cfg.get_double("screen.boundary_factor", m.boundary_factor);
    m.coupling_decay_pitches =
        cfg.get_double("screen.coupling_decay_pitches", m.coupling_decay_pitches);
    const std::string driving = cfg.get_string("screen.driving", "pdm");
    const double carrier = cfg.get_double("screen.carrier_hz", 250e3);
    if (driving == "pdm") {
        m.driving = DrivingScheme::parallel(m.rows, cfg.get_double("screen.bit_duration_s", 100e-6),
                                            carrier);
    } else if (driving == "sdm") {
        m.driving = DrivingScheme::sequential(m.rows, cfg.get_double("screen.slot_duration_s", 100e-6),
                                              carrier);
    } else {
        throw ConfigError("screen.driving must be pdm or sdm");
    }
    m.driving.amp_high = cfg.get_double("screen.amp_high", m.driving.amp_high);
    m.driving.amp_low = cfg.get_double("screen.amp_low", m.driving.amp_low);
    m.sensor = sensor_from_config(cfg);
    m.node_geometry.gap_m = cfg.get_double("geometry.gap_m", m.node_geometry.gap_m);
    m.node_geometry.area_m2 = cfg.get_double("geometry.area_m2", m.node_geometry.area_m2);
    m.node_geometry.epsilon_r = cfg.get_double("geometry.epsilon_r", m.node_geometry.epsilon_r);
    m.scan.dwell_registered_s = cfg.get_double("scan.dwell_registered_s", m.scan.dwell_registered_s);
    m.scan.dwell_rejected_s = cfg.get_double("scan.dwell_rejected_s", m.scan.dwell_rejected_s);
    m.scan.reduced_rate_hz = cfg.get_double("scan.reduced_rate_hz", m.scan.reduced_rate_hz);
    m.scan.full_rate_hz = cfg.get_double("scan.full_rate_hz", m.scan.full_rate_hz);
    m.pose.theta_rad = cfg.get_double("pose.theta_rad", 0.0);
    m.pose.x_t_m = cfg.get_double("pose.x_t_m", 0.0);
    m.pose.y_t_m = cfg.get_double("pose.y_t_m", 0.0);
    m.validate();
    return m;
}

int cmd_simulate_sensor(const Config& cfg, const std::string& out_path) {
    const SensorParams p = sensor_from_config(cfg);
    const double duration = cfg.get_double("simulate.duration_s");
    const double dt = cfg.get_double("simulate.dt_s", 1.0 / (1000.0 * p.f_sw_hz));
    const double touch_dc = cfg.get_double("simulate.touch_delta_c_f", 0.0);
    const double noise_vn = cfg.get_double("simulate.noise_v_n_v", 0.0);
    const double noise_fe = cfg.get_double("simulate.noise_f_e_hz", 100e3);
    const double noise_phi = cfg.get_double("simulate.noise_phi0_rad", 1.5 * k_pi);
    const int decimation = static_cast<int>(cfg.get_u64("simulate.output_decimation", 1));
    cfg.reject_unknown_keys();

    std::optional<NoiseInput> noise;
    if (noise_vn > 0.0) noise = NoiseInput{noise_vn, noise_fe, noise_phi};
    const auto touch = touch_dc != 0.0 ? constant_touch(touch_dc) : std::function<double(double)>{};

    const TraceResult result =
        simulate_trace(p, SwitchSchedule::for_duty(p.d_s), touch, noise, dt, duration);

    std::string csv = "# config_hash=" + cfg.hash_hex() + "\n";
    csv += "time_s,v_o_v,sum_v_t_v\n";
    for (std::size_t i = 0; i < result.samples.size(); i += decimation) {
        const auto& s = result.samples[i];
        csv += format_double(s.time_s) + "," + format_double(s.v_o_v) + "," +
               format_double(s.sum_v_t_v) + "\n";
    }
    write_text_file(out_path, csv);
    std::cerr << "first_crossing_cycle=" << result.first_crossing_cycle << "\n";
    return k_exit_ok;
}

int cmd_sweep(const Config& cfg, const std::string& out_path) {
    const SensorParams p = sensor_from_config(cfg);
    const ElectrodeGeometry g = geometry_from_config(cfg);
    const double lo = cfg.get_double("sweep.band_low_hz");
    const double hi = cfg.get_double("sweep.band_high_hz");
    const double step = cfg.get_double("sweep.f_step_hz", 10e3);
    const double cap = cfg.get_double("sweep.e_cap_v_per_m", 3000.0);
    const int m_cycles = static_cast<int>(cfg.get_u64("sweep.m_cycles", 100));
    const std::string policy_name = cfg.get_string("sweep.phase_policy", "anchors");
    cfg.reject_unknown_keys();
    const SweepPhasePolicy policy = policy_name == "grid64" ? SweepPhasePolicy::grid64
                                                            : SweepPhasePolicy::condition_anchors;

    std::string csv = "# config_hash=" + cfg.hash_hex() + "\n";
    csv += "frequency_hz,min_e_field_v_per_m,capped,worst_phase_rad\n";
    if (hi >= lo && lo > 0) {
        for (const auto& pt : sweep_min_field(p, g, lo, hi, step, cap, m_cycles, policy))
            csv += format_double(pt.frequency_hz) + "," + format_double(pt.min_e_v_per_m) + "," +
                   (pt.capped ? "true" : "false") + "," + format_double(pt.worst_phase_rad) + "\n";
    }
    write_text_file(out_path, csv);
    return k_exit_ok;
}

int cmd_critical_field(const Config& cfg, const std::string& out_path) {
    const double delta_c = cfg.get_double("field.delta_c_f", 0.1e-12);
    const double v_c = cfg.get_double("field.v_c_v", 5.0);
    ElectrodeGeometry g;
    g.area_m2 = cfg.get_double("field.area_m2", 6.4e-5);
    g.gap_m = cfg.get_double("field.gap_m", 1e-4);
    g.epsilon_r = cfg.get_double("field.epsilon_r", 1.0);
    PlateSetup plates;
    plates.plate_gap_m = cfg.get_double("field.plate_gap_m", 0.01);
    plates.screen_thickness_m = cfg.get_double("field.screen_thickness_m", 0.005);
    cfg.reject_unknown_keys();

    const double e_crit = critical_field(touch_charge(delta_c, v_c), g);
    const double v_e = plate_voltage_for_field(e_crit, plates);

    std::string text = "# config_hash=" + cfg.hash_hex() + "\n";
    text += "e_crit_v_per_m=" + format_double(e_crit) + "\n";
    text += "v_e_v=" + format_double(v_e) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_text_file(out_path, text);
    return k_exit_ok;
}

int cmd_predict_frequencies(const Config& cfg, const std::string& out_path) {
    const double f_sw = cfg.get_double("predict.f_sw_hz");
    const double d_s = cfg.get_double("predict.d_s");
    const double lo = cfg.get_double("predict.band_low_hz");
    const double hi = cfg.get_double("predict.band_high_hz");
    std::vector<double> notches;
    if (cfg.has("predict.notch_hz")) notches = cfg.get_double_list("predict.notch_hz");
    cfg.reject_unknown_keys();

    FrequencySets sets = predict_frequency_sets(f_sw, d_s, lo, hi);
    if (!notches.empty()) sets = apply_notch_mask(sets, notches);

    std::string csv = "# config_hash=" + cfg.hash_hex() + "\n";
    csv += "kind,frequency_hz\n";
    for (double f : sets.f_emax_hz) csv += "f_emax," + format_double(f) + "\n";
    for (double f : sets.f_emin_hz) csv += "f_emin," + format_double(f) + "\n";
    std::cout << csv;
    if (!out_path.empty()) write_text_file(out_path, csv);
    return k_exit_ok;
}

int cmd_infer_timing(const Config& cfg, const std::string& out_path) {
    const std::vector<double> maxima = cfg.get_double_list("infer.maxima_hz");
    cfg.reject_unknown_keys();
    const SensorTiming t = infer_sensor_timing(maxima);
    std::string text = "# config_hash=" + cfg.hash_hex() + "\n";
    text += "f_sw_hz=" + format_double(t.f_sw_hz) + "\n";
    text += "d_s=" + format_double(t.d_s) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_text_file(out_path, text);
    return k_exit_ok;
}

std::vector<Vec2> antennas_from_config(const Config& cfg, const std::string& section) {
    const auto xs = cfg.get_double_list(section + ".antenna_xs_m");
    const auto ys = cfg.get_double_list(section + ".antenna_ys_m");
    if (xs.size() != ys.size())
        throw ConfigError(section + ": antenna_xs_m and antenna_ys_m differ in length");
    std::vector<Vec2> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({xs[i], ys[i]});
    return out;
}

/// Trains the line classifier on traces synthesized over a reference screen
/// at identity pose: every line sampled at `train_columns` x positions.
LineClassifier train_reference_classifier(ScreenModel model, const Config& cfg, SplitRng& rng,
                                          double sample_rate, const EmissionOptions& base_opts) {
    model.pose = ScreenPose{};
    const int train_columns = static_cast<int>(cfg.get_u64("training.columns", 4));
    const int k = static_cast<int>(cfg.get_u64("training.k", 3));
    const double noise_sigma = cfg.get_double("training.noise_sigma_v", 0.0);
    EmissionOptions opts = base_opts;
    opts.noise_sigma_v = noise_sigma;
    const double frame_s = model.driving.code_length * model.driving.bit_duration_s;
    const double dur = opts.lead_in_s + 1.5 * frame_s;

    TrainingSet ts;
    ts.columns_sampled = train_columns;
    ts.step_m = model.pitch_m;
    for (int r = 0; r < model.rows; ++r)
        for (int c = 0; c < train_columns; ++c) {
            const Vec2 pos{model.width_m() * (c + 0.5) / train_columns, model.line_center_y(r)};
            SplitRng trng = rng.split(fnv1a64("train") + static_cast<std::uint64_t>(r) * 1024 + c);
            const EmissionTrace trace = emission_trace(model, pos, sample_rate, dur, opts, &trng);
            const auto segs =
                segment_trace(trace, model.driving.bit_duration_s, model.driving.code_length);
            ts.samples.push_back({extract_features(trace, segs), r});
        }
    return LineClassifier(ts, k);
}

int cmd_gen_traces(const Config& cfg, const std::string& out_dir, std::uint64_t seed) {
    ScreenModel model = screen_from_config(cfg);
    if (model.driving.method != DrivingMethod::pdm)
        throw ConfigError("gen-traces currently synthesizes PDM scenarios");
    const auto antennas = antennas_from_config(cfg, "antennas");
    EmissionOptions opts;
    opts.lead_in_s = cfg.get_double("emission.lead_in_s", 0.5e-3);
    opts.frames = static_cast<int>(cfg.get_u64("emission.frames", 1));
    opts.noise_sigma_v = cfg.get_double("emission.noise_sigma_v", 0.0);
    const double sample_rate = cfg.get_double("emission.sample_rate_hz", 2e6);
    SplitRng rng(seed);
    const LineClassifier clf = train_reference_classifier(model, cfg, rng, sample_rate, opts);
    cfg.reject_unknown_keys();

    fs::create_directories(out_dir);
    const double frame_s = model.driving.code_length * model.driving.bit_duration_s;
    const double dur = opts.lead_in_s + 1.5 * frame_s;

    ordered_json manifest;
    manifest["config_hash"] = cfg.hash_hex();
    manifest["seed"] = seed;
    manifest["pose"] = {{"theta_rad", model.pose.theta_rad},
                        {"x_t_m", model.pose.x_t_m},
                        {"y_t_m", model.pose.y_t_m}};
    manifest["screen"] = {{"rows", model.rows},
                          {"cols", model.cols},
                          {"pitch_m", model.pitch_m},
                          {"width_m", model.width_m()},
                          {"code_length", model.driving.code_length},
                          {"bit_duration_s", model.driving.bit_duration_s}};
    ordered_json files = ordered_json::array();
    for (std::size_t i = 0; i < antennas.size(); ++i) {
        SplitRng trng = rng.split(fnv1a64("capture") + i);
        const EmissionTrace trace =
            emission_trace(model, antennas[i], sample_rate, dur, opts, &trng);
        char name[48];
        std::snprintf(name, sizeof(name), "antenna_%03u.trace", static_cast<unsigned>(i));
        write_trace((fs::path(out_dir) / name).string(), trace);
        files.push_back(name);
    }
    manifest["traces"] = files;
    clf.save((fs::path(out_dir) / "classifier.txt").string());
    manifest["classifier"] = "classifier.txt";
    write_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
    return k_exit_ok;
}

int cmd_locate(const Config& cfg, const std::string& trace_dir, const std::string& out_path) {
    LocateOptions opts;
    opts.code_bit_duration_s = cfg.get_double("locate.code_bit_duration_s", 100e-6);
    opts.line_pitch_m = cfg.get_double("locate.line_pitch_m", 0.005);
    opts.screen_width_m = cfg.get_double("locate.screen_width_m", 0.0);
    opts.boundary_ratio = cfg.get_double("locate.boundary_ratio", 0.3);
    opts.on_screen_ratio = cfg.get_double("locate.on_screen_ratio", 0.3);
    opts.min_on_screen = static_cast<int>(cfg.get_u64("locate.min_on_screen", 4));
    const std::string clf_path =
        cfg.get_string("locate.classifier", (fs::path(trace_dir) / "classifier.txt").string());
    cfg.reject_unknown_keys();

    std::vector<std::string> trace_files;
    for (const auto& entry : fs::directory_iterator(trace_dir))
        if (entry.path().extension() == ".trace") trace_files.push_back(entry.path().string());
    std::sort(trace_files.begin(), trace_files.end());
    if (trace_files.empty()) throw LocateFailure("no .trace files in " + trace_dir);

    std::vector<EmissionTrace> traces;
    traces.reserve(trace_files.size());
    for (const auto& f : trace_files) traces.push_back(read_trace(f));

    const auto t0 = std::chrono::steady_clock::now();
    const LineClassifier clf = LineClassifier::load(clf_path);
    const LocateReport report = locate_screen(traces, clf, opts);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ordered_json j;
    j["config_hash"] = cfg.hash_hex();
    j["pose"] = {{"theta_rad", report.pose.theta_rad},
                 {"x_t_m", report.pose.x_t_m},
                 {"y_t_m", report.pose.y_t_m}};
    j["residual_rms_m"] = report.residual_rms_m;
    j["antennas_used"] = report.antennas_used;
    ordered_json preds = ordered_json::array();
    for (const auto& p : report.predictions) {
        preds.push_back({{"antenna_x_m", p.antenna.x},
                         {"antenna_y_m", p.antenna.y},
                         {"on_screen", p.on_screen},
                         {"line_label", p.line_label},
                         {"screen_x_m", p.predicted_screen.x},
                         {"screen_y_m", p.predicted_screen.y}});
    }
    j["predictions"] = preds;
    write_json_file(out_path, j);
    std::cerr << "locate completed in " << format_double(elapsed * 1e3, 4) << " ms\n";
    return k_exit_ok;
}

int cmd_attack(const Config& cfg, const std::string& out_path, std::uint64_t seed) {
    ScreenModel model = screen_from_config(cfg);

    DeviceProfile profile;
    if (cfg.has("device.profiles_csv")) {
        const auto profiles = load_device_profiles(cfg.get_string("device.profiles_csv"));
        const std::string name = cfg.get_string("device.name");
        bool found = false;
        for (const auto& p : profiles)
            if (p.name == name) { profile = p; found = true; break; }
        if (!found) throw ConfigError("device profile not found: " + name);
    }
    profile.sensor = model.sensor;
    profile.attack_frequency_hz =
        cfg.get_double("device.attack_frequency_hz", profile.attack_frequency_hz);
    profile.field_v_per_m = cfg.get_double("device.field_v_per_m", profile.field_v_per_m);

    AntennaArray array =
        AntennaArray::grid(cfg.get_double("array.extent_x_m", 0.24),
                           cfg.get_double("array.extent_y_m", 0.17),
                           cfg.get_double("array.spacing_m", 0.01));
    array.coverage_radius_m = cfg.get_double("array.coverage_radius_m", array.coverage_radius_m);

    CampaignConfig cc;
    cc.trials = static_cast<int>(cfg.get_u64("campaign.trials", 50));
    cc.seed = seed;
    cc.target_screen = {cfg.get_double("campaign.target_x_m"),
                        cfg.get_double("campaign.target_y_m")};
    if (!model.in_bounds(cc.target_screen))
        throw ConfigError("campaign target lies outside the screen bounds");
    cc.field_v_per_m = cfg.get_double("campaign.field_v_per_m", 0.0);
    cc.footprint_radius_m = cfg.get_double("campaign.footprint_radius_m", 0.002);
    cc.amplitude_jitter_sigma = cfg.get_double("campaign.amplitude_jitter_sigma", 0.0);
    cc.position_jitter_sigma_m = cfg.get_double("campaign.position_jitter_sigma_m", 0.0);
    cc.pose_max_rotation_rad = cfg.get_double("campaign.pose_max_rotation_rad", k_pi);
    cc.pose_max_translation_m = cfg.get_double("campaign.pose_max_translation_m", 0.02);
    cc.coupling_factor = cfg.get_double("campaign.coupling_factor", 1.0);
    cc.max_retries = static_cast<int>(cfg.get_u64("campaign.max_retries", cc.max_retries));
    if (cfg.has("campaign.material")) {
        const auto materials = load_material_presets(cfg.get_string("campaign.materials_csv"));
        const std::string name = cfg.get_string("campaign.material");
        const double thickness = cfg.get_double("campaign.thickness_m", 0.01);
        bool found = false;
        for (const auto& m : materials)
            if (m.name == name) {
                cc.coupling_factor *= coupling_attenuation(m, thickness);
                found = true;
                break;
            }
        if (!found) throw ConfigError("material preset not found: " + name);
    }
    cfg.reject_unknown_keys();

    const InjectionReport report = execute_campaign(cc, model, profile, array);

    ordered_json j;
    j["config_hash"] = cfg.hash_hex();
    j["seed"] = seed;
    j["trials"] = cc.trials;
    j["success_rate"] = report.success_rate;
    j["qd_x_px"] = report.qd_x_px;
    j["qd_y_px"] = report.qd_y_px;
    ordered_json attempts = ordered_json::array();
    for (const auto& a : report.attempts) {
        attempts.push_back({{"trial", a.trial},
                            {"intended_x_m", a.intended_screen.x},
                            {"intended_y_m", a.intended_screen.y},
                            {"touch_detected", a.touch_detected},
                            {"detected_x_m", a.detected_screen.x},
                            {"detected_y_m", a.detected_screen.y},
                            {"outcome", to_string(a.outcome)},
                            {"success", a.success},
                            {"retries", a.retries},
                            {"elapsed_s", a.elapsed_s}});
    }
    j["attempts"] = attempts;
    write_json_file(out_path, j);
    std::cout << "success_rate=" << format_double(report.success_rate) << "\n";
    return k_exit_ok;
}

int cmd_detect(const Config& cfg, const std::string& out_path, std::uint64_t seed) {
    ScanModeConfig sc;
    sc.dwell_registered_s = cfg.get_double("detect.dwell_registered_s", sc.dwell_registered_s);
    sc.dwell_rejected_s = cfg.get_double("detect.dwell_rejected_s", sc.dwell_rejected_s);
    sc.reduced_rate_hz = cfg.get_double("detect.reduced_rate_hz", sc.reduced_rate_hz);
    sc.full_rate_hz = cfg.get_double("detect.full_rate_hz", sc.full_rate_hz);
    const int episodes = static_cast<int>(cfg.get_u64("detect.episodes", 500));
    cfg.reject_unknown_keys();

    const auto results = run_detection_episodes(episodes, seed, sc);
    int errors = 0;
    ordered_json rows = ordered_json::array();
    for (const auto& ep : results) {
        if (!ep.correct) ++errors;
        const char* truth = ep.truth == ScanEvent::none
                                ? "none"
                                : (ep.truth == ScanEvent::touch_rejected ? "rejected"
                                                                         : "registered");
        rows.push_back({{"truth", truth},
                        {"dwell_s", ep.dwell_s ? ordered_json(*ep.dwell_s) : ordered_json()},
                        {"classified", to_string(ep.classified)},
                        {"correct", ep.correct}});
    }
    ordered_json j;
    j["config_hash"] = cfg.hash_hex();
    j["seed"] = seed;
    j["episodes"] = episodes;
    j["errors"] = errors;
    j["episode_results"] = rows;
    write_json_file(out_path, j);
    std::cout << "errors=" << errors << "\n";
    return k_exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Touchscreen IEMI attack simulator"};
    app.require_subcommand(1);

    std::string config_path, out_path, trace_dir;
    std::uint64_t seed = 1;
    bool seed_given = false;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", config_path, "config file path");
        auto* seed_opt = sub->add_option("--seed", seed, "experiment seed");
        seed_opt->each([&](const std::string&) { seed_given = true; });
        if (needs_out) sub->add_option("--out", out_path, "output path");
        return sub;
    };

    auto* sim = add_common(app.add_subcommand("simulate-sensor", "sensor waveform CSV"), true);
    auto* sweep = add_common(app.add_subcommand("sweep", "minimum-field frequency sweep CSV"), true);
    auto* crit = add_common(app.add_subcommand("critical-field", "critical field and plate voltage"), true);
    auto* pred = add_common(app.add_subcommand("predict-frequencies", "peak/zero frequency sets"), true);
    auto* infer = add_common(app.add_subcommand("infer-timing", "recover f_sw and duty from maxima"), true);
    auto* gen = add_common(app.add_subcommand("gen-traces", "synthesize emission traces"), true);
    auto* locate = add_common(app.add_subcommand("locate", "solve screen pose from traces"), true);
    locate->add_option("--traces", trace_dir, "trace directory")->required();
    auto* attack = add_common(app.add_subcommand("attack", "closed-loop injection campaign"), true);
    auto* detect = add_common(app.add_subcommand("detect", "scan-mode dwell detection episodes"), true);

    // flag-style shortcuts for the calculator-like commands
    std::vector<std::string> overrides;
    for (auto* sub : {sim, sweep, crit, pred, infer, gen, locate, attack, detect})
        sub->add_option("--set", overrides, "override config key (section.key=value)");

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = config_path.empty() ? Config{} : Config::from_file(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects section.key=value");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed_given) cfg.set("seed", std::to_string(seed));
        const std::uint64_t eff_seed = cfg.get_u64("seed", 1);

        if (app.got_subcommand(sim)) {
            if (out_path.empty()) throw ConfigError("simulate-sensor requires --out");
            return cmd_simulate_sensor(cfg, out_path);
        }
        if (app.got_subcommand(sweep)) {
            if (out_path.empty()) throw ConfigError("sweep requires --out");
            return cmd_sweep(cfg, out_path);
        }
        if (app.got_subcommand(crit)) return cmd_critical_field(cfg, out_path);
        if (app.got_subcommand(pred)) return cmd_predict_frequencies(cfg, out_path);
        if (app.got_subcommand(infer)) return cmd_infer_timing(cfg, out_path);
        if (app.got_subcommand(gen)) {
            if (out_path.empty()) throw ConfigError("gen-traces requires --out directory");
            return cmd_gen_traces(cfg, out_path, eff_seed);
        }
        if (app.got_subcommand(locate)) {
            if (out_path.empty()) throw ConfigError("locate requires --out");
            return cmd_locate(cfg, trace_dir, out_path);
        }
        if (app.got_subcommand(attack)) {
            if (out_path.empty()) throw ConfigError("attack requires --out");
            return cmd_attack(cfg, out_path, eff_seed);
        }
        if (app.got_subcommand(detect)) {
            if (out_path.empty()) throw ConfigError("detect requires --out");
            return cmd_detect(cfg, out_path, eff_seed);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return k_exit_config;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return k_exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return k_exit_failure;
    }
    return k_exit_ok;
}
