#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "iemisim/rng.hpp"
#include "iemisim/screen.hpp"
#include "iemisim/trace_io.hpp"

using namespace iemisim;
using Catch::Approx;

namespace {

ScreenModel test_screen(int rows = 16, int cols = 24) {
    ScreenModel m;
    m.rows = rows;
    m.cols = cols;
    m.pitch_m = 0.005;
    m.sensor = reference_sensor_params();
    m.sensor.f_sw_hz = 70e3;
    m.sensor.d_s = 0.125;
    // 96 accumulated cycles put the firing threshold near 955 V/m for the
    // 0.1 mm node gap, comfortably below the 1200-1500 V/m attack fields
    m.sensor.n_cycles = 96;
    m.driving = DrivingScheme::parallel(rows);
    return m;
}

}  // namespace

TEST_CASE("walsh code matrices are orthogonal and bad ones are rejected", "[screen]") {
    const auto h = walsh_matrix(8);
    for (int a = 0; a < 8; ++a)
        for (int b = a + 1; b < 8; ++b) {
            int dot = 0;
            for (int i = 0; i < 8; ++i) dot += h[a][i] * h[b][i];
            CHECK(dot == 0);
        }
    CHECK_THROWS_AS(walsh_matrix(12), std::invalid_argument);

    DrivingScheme bad = DrivingScheme::parallel(4);
    bad.codes[1] = bad.codes[0];  // duplicate rows are not orthogonal
    CHECK_THROWS_AS(bad.validate_codes(), std::invalid_argument);
}

TEST_CASE("scan frame detects fingers and stays silent otherwise", "[screen]") {
    const ScreenModel m = test_screen();

    const TouchFrame empty = scan_frame(m, {}, {});
    CHECK(empty.touches.empty());

    // one finger inside node (row 2, col 2)
    TouchPoint finger{{m.node_center(2, 2)}, 0.5e-12};
    const TouchFrame one = scan_frame(m, {finger}, {});
    REQUIRE(one.touches.size() == 1);
    CHECK(one.touches[0].peak_row == 2);
    CHECK(one.touches[0].peak_col == 2);
    CHECK(one.touches[0].centroid.x == Approx(m.node_center(2, 2).x));
    CHECK(one.touches[0].centroid.y == Approx(m.node_center(2, 2).y));

    TouchPoint outside{{-0.01, 0.0}, 0.5e-12};
    CHECK_THROWS_AS(scan_frame(m, {outside}, {}), std::invalid_argument);
}

TEST_CASE("footprint injection fires the covered nodes only", "[screen]") {
    const ScreenModel m = test_screen();
    IemiFootprint fp;
    fp.center_antenna = m.node_center(5, 7);  // identity pose
    fp.profile = IemiFootprint::Profile::disc;
    fp.radius_m = m.pitch_m;
    fp.peak_e_v_per_m = 1200.0;
    fp.source = NoiseInput{0.0, 140e3, 0.0};

    const TouchFrame frame = scan_frame(m, {}, {fp});
    REQUIRE_FALSE(frame.touches.empty());

    // brute-force check of every node against the same rule
    const double v_th_n = m.sensor.threshold_n_v();
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            const double dist = m.node_distance(r, c, fp.center_antenna);
            const bool inside = dist <= fp.radius_m;
            const double dev = frame.deviations_v[static_cast<std::size_t>(r) * m.cols + c];
            if (inside) {
                NoiseInput n = fp.source;
                n.v_n_v = fp.peak_e_v_per_m * m.node_geometry.gap_m;
                SusceptibilityQuery q{m.sensor, n, m.sensor.n_cycles};
                CHECK(dev == Approx(accumulate_m_cycles(q)).margin(1e-12));
                CHECK(std::fabs(dev) >= v_th_n);
            } else {
                CHECK(dev == 0.0);
            }
        }
}

TEST_CASE("a sub-pitch disc footprint on a node perturbs only that node", "[screen]") {
    const ScreenModel m = test_screen();
    IemiFootprint fp;
    fp.center_antenna = m.node_center(4, 9);
    fp.radius_m = 0.4 * m.pitch_m;
    fp.peak_e_v_per_m = 2000.0;
    fp.source = NoiseInput{0.0, 140e3, 0.0};
    const TouchFrame frame = scan_frame(m, {}, {fp});
    REQUIRE(frame.touches.size() == 1);
    CHECK(frame.touches[0].node_count == 1);
    CHECK(frame.touches[0].peak_row == 4);
    CHECK(frame.touches[0].peak_col == 9);
}

TEST_CASE("identical inputs give identical frames", "[screen]") {
    const ScreenModel m = test_screen();
    IemiFootprint fp;
    fp.center_antenna = {0.031, 0.027};
    fp.radius_m = 0.006;
    fp.peak_e_v_per_m = 1500.0;
    fp.source = NoiseInput{0.0, 140e3, 0.0};
    const TouchFrame a = scan_frame(m, {}, {fp}, 3, 0.125);
    const TouchFrame b = scan_frame(m, {}, {fp}, 3, 0.125);
    REQUIRE(a.touches.size() == b.touches.size());
    CHECK(a.deviations_v == b.deviations_v);
    for (std::size_t i = 0; i < a.touches.size(); ++i) {
        CHECK(a.touches[i].centroid.x == b.touches[i].centroid.x);
        CHECK(a.touches[i].centroid.y == b.touches[i].centroid.y);
    }
}

TEST_CASE("PDM decoding inverts the coded measurements exactly", "[screen]") {
    const ScreenModel m = test_screen();

    std::vector<double> zeros(static_cast<std::size_t>(m.rows) * m.cols, 0.0);
    const auto m0 = encode_pdm(m, zeros);
    for (double v : decode_pdm(m, m0)) CHECK(v == 0.0);

    std::vector<double> single = zeros;
    single[static_cast<std::size_t>(3) * m.cols + 5] = -0.42;
    const auto m1 = decode_pdm(m, encode_pdm(m, single));
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            const double v = m1[static_cast<std::size_t>(r) * m.cols + c];
            if (r == 3 && c == 5)
                CHECK(v == Approx(-0.42).epsilon(1e-12));
            else
                CHECK(std::fabs(v) < 1e-15);
        }

    SplitRng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> field(zeros.size());
        for (auto& v : field) v = rng.uniform(-1.0, 1.0);
        const auto decoded = decode_pdm(m, encode_pdm(m, field));
        const auto reference = sequential_scan(m, field);
        for (std::size_t i = 0; i < field.size(); ++i)
            CHECK(std::fabs(decoded[i] - reference[i]) < 1e-9);
    }
}

TEST_CASE("SDM emission bursts appear at the pointed line's slot", "[screen]") {
    ScreenModel m = test_screen();
    m.driving = DrivingScheme::sequential(m.rows);
    const double fs = 2e6;
    EmissionOptions opts;
    opts.lead_in_s = 0.0;

    for (int r : {0, 3, 11}) {
        const Vec2 pos = {0.05, m.line_center_y(r)};
        const EmissionTrace tr =
            emission_trace(m, pos, fs, m.rows * m.driving.slot_duration_s, opts);
        double peak = 0.0;
        for (double v : tr.samples_v) peak = std::fmax(peak, std::fabs(v));
        std::size_t onset = 0;
        for (std::size_t i = 0; i < tr.samples_v.size(); ++i)
            if (std::fabs(tr.samples_v[i]) > 0.5 * peak) { onset = i; break; }
        const double onset_s = static_cast<double>(onset) / fs;
        CHECK(onset_s == Approx(r * m.driving.slot_duration_s).margin(0.1 * m.driving.slot_duration_s));
    }
}

TEST_CASE("emission amplitude collapses outside the panel", "[screen]") {
    const ScreenModel m = test_screen();
    EmissionOptions opts;
    opts.lead_in_s = 0.0;
    const double fs = 2e6;
    const double dur = m.driving.code_length * m.driving.bit_duration_s;

    const EmissionTrace inside = emission_trace(m, {0.05, 0.03}, fs, dur, opts);
    const EmissionTrace outside = emission_trace(m, {-0.02, 0.03}, fs, dur, opts);
    auto rms = [](const EmissionTrace& t) {
        double acc = 0.0;
        for (double v : t.samples_v) acc += v * v;
        return std::sqrt(acc / t.samples_v.size());
    };
    CHECK(rms(outside) <= 0.100001 * rms(inside));

    CHECK_THROWS_AS(emission_trace(m, {0.05, 0.03}, 1.2 * m.driving.carrier_hz, dur, opts),
                    std::invalid_argument);
}

TEST_CASE("trace files round-trip bit exactly", "[screen]") {
    const ScreenModel m = test_screen();
    EmissionOptions opts;
    SplitRng rng(5);
    opts.noise_sigma_v = 0.01;
    const EmissionTrace tr = emission_trace(m, {0.041, 0.0305}, 2e6, 2e-3, opts, &rng);

    const auto path = std::filesystem::temp_directory_path() / "iemisim_trace_roundtrip.trace";
    write_trace(path.string(), tr);
    const EmissionTrace back = read_trace(path.string());
    std::filesystem::remove(path);

    CHECK(back.sample_rate_hz == tr.sample_rate_hz);
    CHECK(back.antenna.x == tr.antenna.x);
    CHECK(back.antenna.y == tr.antenna.y);
    REQUIRE(back.samples_v.size() == tr.samples_v.size());
    for (std::size_t i = 0; i < tr.samples_v.size(); ++i)
        CHECK(back.samples_v[i] == tr.samples_v[i]);
}

TEST_CASE("scan mode transitions and dwell ordering", "[screen]") {
    ScanModeConfig cfg;
    cfg.validate();
    CHECK(cfg.dwell_registered_s > cfg.dwell_rejected_s);

    ScanMode mode;
    mode = step_scan_mode(mode, ScanEvent::none, 0.0, cfg);
    CHECK(mode.state == ScanMode::State::reduced);
    CHECK(mode.next_pulse_s == Approx(1.0 / 120.0));

    mode = step_scan_mode(mode, ScanEvent::touch_rejected, 0.05, cfg);
    CHECK(mode.state == ScanMode::State::full);

    mode = step_scan_mode(mode, ScanEvent::none, 0.05 + cfg.dwell_rejected_s * 0.5, cfg);
    CHECK(mode.state == ScanMode::State::full);
    mode = step_scan_mode(mode, ScanEvent::none, 0.05 + cfg.dwell_rejected_s, cfg);
    CHECK(mode.state == ScanMode::State::reduced);

    mode = step_scan_mode(mode, ScanEvent::touch_registered, 0.3, cfg);
    mode = step_scan_mode(mode, ScanEvent::none, 0.3 + cfg.dwell_rejected_s + 0.01, cfg);
    CHECK(mode.state == ScanMode::State::full);  // registered dwell is longer
    mode = step_scan_mode(mode, ScanEvent::none, 0.3 + cfg.dwell_registered_s, cfg);
    CHECK(mode.state == ScanMode::State::reduced);

    CHECK_THROWS_AS(step_scan_mode(mode, ScanEvent::none, 0.0, cfg), std::invalid_argument);

    ScanModeConfig bad = cfg;
    bad.dwell_rejected_s = bad.dwell_registered_s;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
