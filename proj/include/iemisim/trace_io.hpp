#pragma once

#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>

#include "iemisim/common.hpp"
#include "iemisim/screen.hpp"

namespace iemisim {

/// Trace file layout: three header lines
///   sample_rate_hz=<int>
///   antenna_x_m=<float>
///   antenna_y_m=<float>
/// followed by one sample in volts per line. Floats are written with enough
/// digits to round-trip exactly.
inline void write_trace(const std::string& path, const EmissionTrace& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    out << "sample_rate_hz=" << static_cast<long long>(std::llround(trace.sample_rate_hz)) << "\n";
    out << "antenna_x_m=" << format_double_exact(trace.antenna.x) << "\n";
    out << "antenna_y_m=" << format_double_exact(trace.antenna.y) << "\n";
    for (double s : trace.samples_v) out << format_double_exact(s) << "\n";
    if (!out) throw std::runtime_error("short write on trace file: " + path);
}

inline EmissionTrace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);
    EmissionTrace trace;
    std::string line;
    auto expect = [&](const char* key) -> std::string {
        if (!std::getline(in, line)) throw std::runtime_error("truncated trace header: " + path);
        const std::string prefix = std::string(key) + "=";
        if (line.rfind(prefix, 0) != 0)
            throw std::runtime_error("bad trace header line (expected " + prefix + "...): " + path);
        return line.substr(prefix.size());
    };
    trace.sample_rate_hz = std::strtod(expect("sample_rate_hz").c_str(), nullptr);
    trace.antenna.x = std::strtod(expect("antenna_x_m").c_str(), nullptr);
    trace.antenna.y = std::strtod(expect("antenna_y_m").c_str(), nullptr);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        trace.samples_v.push_back(std::strtod(line.c_str(), nullptr));
    }
    return trace;
}

}  // namespace iemisim
