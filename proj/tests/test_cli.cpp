// Exit-code and output-shape checks for the command-line harness.
#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
};

CliResult run(const std::string& args) {
    const std::string cmd = std::string(IEMISIM_CLI_PATH) + " " + args + " 2>/dev/null";
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch() {
    const auto dir = fs::temp_directory_path() / "iemisim_cli_tests";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("calculator commands print hash-stamped key-value output", "[cli]") {
    const auto r = run("critical-field");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("# config_hash=") == 0);
    CHECK(r.out.find("e_crit_v_per_m=") != std::string::npos);
    CHECK(r.out.find("v_e_v=") != std::string::npos);
}

TEST_CASE("invalid configs exit with the config-error code", "[cli]") {
    SECTION("zero duration") {
        const auto cfg = scratch() / "zero_duration.cfg";
        std::ofstream(cfg) << "seed = 1\n[simulate]\nduration_s = 0\n";
        const auto r = run("simulate-sensor --config " + cfg.string() + " --out " +
                           (scratch() / "never.csv").string());
        CHECK(r.exit_code == 2);
    }
    SECTION("unknown key") {
        const auto cfg = scratch() / "unknown_key.cfg";
        std::ofstream(cfg) << "seed = 1\n[simulate]\nduration_s = 1e-3\nbogus_key = 1\n";
        const auto r = run("simulate-sensor --config " + cfg.string() + " --out " +
                           (scratch() / "never.csv").string());
        CHECK(r.exit_code == 2);
    }
    SECTION("missing config file") {
        const auto r = run("sweep --config /nonexistent.cfg --out " +
                           (scratch() / "never.csv").string());
        CHECK(r.exit_code == 2);
    }
}

TEST_CASE("domain failures exit with the failure code", "[cli]") {
    SECTION("inconsistent maxima cannot be inverted") {
        const auto r = run("infer-timing --set infer.maxima_hz=100e3,137e3");
        CHECK(r.exit_code == 1);
    }
    SECTION("locate fails on an empty trace directory") {
        const auto dir = scratch() / "no_traces";
        fs::create_directories(dir);
        const auto r = run("locate --traces " + dir.string() + " --out " +
                           (scratch() / "never.json").string());
        CHECK(r.exit_code == 1);
    }
}

TEST_CASE("simulated touch waveform reaches the threshold", "[cli]") {
    const auto cfg = scratch() / "touch.cfg";
    std::ofstream(cfg) << "seed = 1\n[simulate]\nduration_s = 0.00064\n"
                          "touch_delta_c_f = 0.5e-12\noutput_decimation = 25\n";
    const auto out = scratch() / "touch.csv";
    const auto r = run("simulate-sensor --config " + cfg.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    std::ifstream in(out);
    std::string line;
    double peak = 0.0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 't') continue;
        const auto c2 = line.rfind(',');
        peak = std::max(peak, std::abs(std::stod(line.substr(c2 + 1))));
    }
    CHECK(peak >= 2.75);
}

TEST_CASE("an empty sweep band yields a header-only CSV", "[cli]") {
    const auto cfg = scratch() / "empty_band.cfg";
    std::ofstream(cfg) << "seed = 1\n[sweep]\nband_low_hz = 500e3\nband_high_hz = 100e3\n";
    const auto out = scratch() / "empty.csv";
    const auto r = run("sweep --config " + cfg.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    std::ifstream in(out);
    std::string line;
    int rows = 0;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.rfind("frequency_hz,", 0) == 0) header = true;
        else if (!line.empty() && line[0] != '#') ++rows;
    }
    CHECK(header);
    CHECK(rows == 0);
}

TEST_CASE("sweep output has the documented columns", "[cli]") {
    const auto cfg = scratch() / "sweep.cfg";
    std::ofstream(cfg) << "seed = 1\n[sensor]\nf_sw_hz = 70e3\nd_s = 0.125\n"
                          "[geometry]\narea_m2 = 6.4e-5\ngap_m = 1e-4\n"
                          "[sweep]\nband_low_hz = 100e3\nband_high_hz = 200e3\n"
                          "f_step_hz = 20e3\n";
    const auto out = scratch() / "sweep.csv";
    const auto r = run("sweep --config " + cfg.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    std::ifstream in(out);
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("# config_hash=", 0) == 0);
    std::getline(in, line);
    CHECK(line == "frequency_hz,min_e_field_v_per_m,capped,worst_phase_rad");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 6);
}
