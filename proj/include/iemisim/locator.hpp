#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iemisim/common.hpp"
#include "iemisim/pose.hpp"
#include "iemisim/screen.hpp"

namespace iemisim {

struct Segment {
    std::size_t begin = 0;  ///< first sample index
    std::size_t end = 0;    ///< one past the last sample index
};

namespace detail {

inline double rms(const std::vector<double>& v, std::size_t begin, std::size_t end) {
    if (end <= begin) return 0.0;
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += v[i] * v[i];
    return std::sqrt(acc / static_cast<double>(end - begin));
}

}  // namespace detail

/// Splits a trace into code-bit segments. The code word onset is found by
/// energy threshold, then the bit grid is refined by maximizing the energy
/// transitions across candidate bit boundaries. Throws SegmentationFailure
/// when no code word stands out of the noise.
inline std::vector<Segment> segment_trace(const EmissionTrace& trace, double code_bit_duration_s,
                                          int code_length) {
    const auto& s = trace.samples_v;
    const std::size_t bit_len =
        static_cast<std::size_t>(std::llround(code_bit_duration_s * trace.sample_rate_hz));
    if (bit_len < 8) throw std::invalid_argument("code bit shorter than 8 samples");
    if (s.size() < bit_len * static_cast<std::size_t>(code_length))
        throw std::invalid_argument("trace shorter than one code word");

    double peak = 0.0;
    for (double x : s) peak = std::fmax(peak, std::fabs(x));
    if (!(peak > 0.0)) throw SegmentationFailure("trace is silent");

    const double onset_level = 0.3 * peak;
    std::size_t onset = s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
        if (std::fabs(s[i]) >= onset_level) { onset = i; break; }
    if (onset + bit_len * code_length > s.size())
        throw SegmentationFailure("no code word found before the end of the trace");

    // A real burst keeps its energy up across the first half bit; noise spikes do not.
    const double sustain = detail::rms(s, onset, onset + bit_len / 2);
    const double front_floor = detail::rms(s, 0, std::max<std::size_t>(onset, bit_len / 2));
    if (sustain < 2.5 * front_floor || sustain < 0.15 * peak)
        throw SegmentationFailure("no sustained code word detected");

    // Refine the grid phase: slide the boundary comb up to half a bit each
    // way and keep the offset with the sharpest inter-bit energy contrast.
    const long half = static_cast<long>(bit_len / 2);
    const std::size_t win = std::max<std::size_t>(4, bit_len / 4);
    double best_score = -1.0;
    long best_off = 0;
    for (long off = -half; off <= half; ++off) {
        const long start = static_cast<long>(onset) + off;
        if (start < 0) continue;
        if (static_cast<std::size_t>(start) + bit_len * code_length > s.size()) break;
        double score = 0.0;
        for (int b = 1; b < code_length; ++b) {
            const std::size_t edge = static_cast<std::size_t>(start) + b * bit_len;
            const double left = detail::rms(s, edge - win, edge);
            const double right = detail::rms(s, edge, edge + win);
            score += std::fabs(left - right);
        }
        if (score > best_score) { best_score = score; best_off = off; }
    }

    const std::size_t start = static_cast<std::size_t>(static_cast<long>(onset) + best_off);
    std::vector<Segment> segments(code_length);
    for (int b = 0; b < code_length; ++b)
        segments[b] = {start + b * bit_len, start + (b + 1) * bit_len};
    return segments;
}

struct FeatureVector {
    std::vector<double> values;  ///< per-code-bit RMS magnitudes
    Vec2 antenna;

    double mean_magnitude() const {
        if (values.empty()) return 0.0;
        return std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    }
};

inline FeatureVector extract_features(const EmissionTrace& trace,
                                      const std::vector<Segment>& segments) {
    FeatureVector fv;
    fv.antenna = trace.antenna;
    fv.values.reserve(segments.size());
    for (const auto& seg : segments)
        fv.values.push_back(detail::rms(trace.samples_v, seg.begin, seg.end));
    return fv;
}

struct TrainingSet {
    std::vector<std::pair<FeatureVector, int>> samples;  ///< (features, line index)
    double step_m = 0.01;
    int columns_sampled = 12;

    void validate() const {
        std::map<int, int> labels;
        for (const auto& [fv, label] : samples) ++labels[label];
        if (labels.size() < 2)
            throw std::invalid_argument("training set needs at least two distinct line labels");
    }
};

/// k-nearest-neighbor line classifier over L2-normalized feature vectors.
class LineClassifier {
public:
    LineClassifier() = default;

    LineClassifier(const TrainingSet& ts, int k = 3, bool normalize = true)
        : k_(k), normalize_(normalize) {
        ts.validate();
        if (k < 1 || k % 2 == 0) throw std::invalid_argument("k must be odd and >= 1");
        if (static_cast<std::size_t>(k) > ts.samples.size())
            throw std::invalid_argument("k exceeds training set size");
        for (const auto& [fv, label] : ts.samples) {
            vectors_.push_back(prepare(fv.values));
            labels_.push_back(label);
        }
        dim_ = vectors_.empty() ? 0 : vectors_.front().size();
        for (const auto& v : vectors_)
            if (v.size() != dim_) throw std::invalid_argument("inconsistent feature dimensions");
    }

    int k() const { return k_; }
    bool normalized() const { return normalize_; }
    std::size_t size() const { return vectors_.size(); }
    std::size_t dimension() const { return dim_; }

    int classify(const FeatureVector& query) const {
        if (vectors_.empty()) throw std::logic_error("classifier is untrained");
        if (query.values.size() != dim_)
            throw std::invalid_argument("query dimension mismatch");
        const std::vector<double> q = prepare(query.values);
        std::vector<std::pair<double, int>> dist;  // (distance, label)
        dist.reserve(vectors_.size());
        for (std::size_t i = 0; i < vectors_.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                const double d = q[j] - vectors_[i][j];
                d2 += d * d;
            }
            dist.push_back({d2, labels_[i]});
        }
        std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());
        std::map<int, int> votes;
        for (int i = 0; i < k_; ++i) ++votes[dist[i].second];
        int best_label = dist[0].second, best_votes = 0;
        for (const auto& [label, count] : votes)
            if (count > best_votes || (count == best_votes && label < best_label)) {
                best_label = label;
                best_votes = count;
            }
        return best_label;
    }

    /// Text persistence: a header then one "label v0 v1 ..." row per vector.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write classifier file: " + path);
        out << "code_length=" << dim_ << " k=" << k_ << " normalized=" << (normalize_ ? 1 : 0)
            << "\n";
        for (std::size_t i = 0; i < vectors_.size(); ++i) {
            out << labels_[i];
            for (double v : vectors_[i]) out << " " << format_double_exact(v);
            out << "\n";
        }
    }

    static LineClassifier load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open classifier file: " + path);
        std::string header;
        if (!std::getline(in, header)) throw std::runtime_error("empty classifier file: " + path);
        LineClassifier clf;
        std::size_t dim = 0;
        int norm_flag = 1;
        if (std::sscanf(header.c_str(), "code_length=%zu k=%d normalized=%d", &dim, &clf.k_,
                        &norm_flag) != 3)
            throw std::runtime_error("bad classifier header: " + header);
        clf.normalize_ = norm_flag != 0;
        clf.dim_ = dim;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ss(line);
            int label;
            ss >> label;
            std::vector<double> v(dim);
            for (std::size_t j = 0; j < dim; ++j) ss >> v[j];
            if (!ss) throw std::runtime_error("bad classifier row: " + line);
            clf.vectors_.push_back(std::move(v));
            clf.labels_.push_back(label);
        }
        if (clf.vectors_.empty()) throw std::runtime_error("classifier file holds no rows");
        return clf;
    }

private:
    std::vector<double> prepare(const std::vector<double>& v) const {
        if (!normalize_) return v;
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm <= 0.0) return v;
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
        return out;
    }

    std::vector<std::vector<double>> vectors_;
    std::vector<int> labels_;
    std::size_t dim_ = 0;
    int k_ = 3;
    bool normalize_ = true;
};

/// Flags the adjacent antenna pairs whose amplitude ratio collapses, i.e.
/// the pairs straddling a screen boundary.
inline std::vector<bool> detect_boundary(const std::vector<double>& amplitudes,
                                         double ratio_threshold = 0.3) {
    if (amplitudes.size() < 2)
        throw std::invalid_argument("boundary detection needs at least two antennas");
    std::vector<bool> flags(amplitudes.size() - 1, false);
    for (std::size_t i = 0; i + 1 < amplitudes.size(); ++i) {
        const double hi = std::fmax(amplitudes[i], amplitudes[i + 1]);
        const double lo = std::fmin(amplitudes[i], amplitudes[i + 1]);
        if (hi <= 0.0) continue;
        flags[i] = (lo / hi) < ratio_threshold;
    }
    return flags;
}

/// One registration constraint: an antenna whose screen x, screen y, or
/// both coordinates are known.
struct PoseConstraint {
    enum class Dim { x, y, both };
    Vec2 antenna;
    Dim dim = Dim::both;
    double target_x_m = 0.0;
    double target_y_m = 0.0;
};

struct PoseSolution {
    ScreenPose pose;
    double residual_rms_m = 0.0;
};

namespace detail {

/// Least-squares translation and residual for a fixed rotation angle.
inline bool solve_translation(const std::vector<PoseConstraint>& constraints, double theta,
                              double* x_t, double* y_t, double* rss) {
    const double c = std::cos(theta), s = std::sin(theta);
    double sum_x = 0.0, sum_y = 0.0;
    int n_x = 0, n_y = 0;
    for (const auto& pc : constraints) {
        const double rx = c * pc.antenna.x - s * pc.antenna.y;
        const double ry = s * pc.antenna.x + c * pc.antenna.y;
        if (pc.dim != PoseConstraint::Dim::y) { sum_x += pc.target_x_m - rx; ++n_x; }
        if (pc.dim != PoseConstraint::Dim::x) { sum_y += pc.target_y_m - ry; ++n_y; }
    }
    if (n_x == 0 || n_y == 0) return false;
    *x_t = sum_x / n_x;
    *y_t = sum_y / n_y;
    double acc = 0.0;
    for (const auto& pc : constraints) {
        const double rx = c * pc.antenna.x - s * pc.antenna.y + *x_t;
        const double ry = s * pc.antenna.x + c * pc.antenna.y + *y_t;
        if (pc.dim != PoseConstraint::Dim::y) acc += (rx - pc.target_x_m) * (rx - pc.target_x_m);
        if (pc.dim != PoseConstraint::Dim::x) acc += (ry - pc.target_y_m) * (ry - pc.target_y_m);
    }
    *rss = acc;
    return true;
}

}  // namespace detail

/// Least-squares rigid registration. The rotation is found by a coarse
/// 0.1 degree grid over (-pi, pi] followed by golden-section refinement;
/// the translation is closed-form at each candidate angle. Throws
/// PoseUnsolvable for configurations that leave the pose unresolved.
inline PoseSolution solve_pose(const std::vector<PoseConstraint>& constraints) {
    int scalar_rows = 0;
    for (const auto& pc : constraints)
        scalar_rows += pc.dim == PoseConstraint::Dim::both ? 2 : 1;
    if (scalar_rows < 3)
        throw PoseUnsolvable("need at least three scalar constraints");
    bool distinct = false;
    for (std::size_t i = 1; i < constraints.size(); ++i)
        if (distance(constraints[i].antenna, constraints[0].antenna) > 1e-12) distinct = true;
    if (!distinct) throw PoseUnsolvable("antenna positions are coincident");

    auto score = [&](double theta, double* xt, double* yt) {
        double rss = 0.0;
        if (!detail::solve_translation(constraints, theta, xt, yt, &rss))
            throw PoseUnsolvable("constraints do not cover both screen dimensions");
        return rss;
    };

    const double step = 0.1 * k_pi / 180.0;
    double best_theta = 0.0, best_rss = std::numeric_limits<double>::infinity();
    double xt = 0.0, yt = 0.0;
    const int n_steps = static_cast<int>(std::ceil(2.0 * k_pi / step));
    double scale = 0.0;
    for (int i = 0; i < n_steps; ++i) {
        const double theta = -k_pi + (i + 1) * 2.0 * k_pi / n_steps;
        const double rss = score(theta, &xt, &yt);
        scale = std::fmax(scale, rss);
        if (rss < best_rss) { best_rss = rss; best_theta = theta; }
    }
    // A flat objective means the rotation is unobservable.
    if (scale - best_rss <= 1e-18 + 1e-12 * scale)
        throw PoseUnsolvable("rotation is unobservable from these constraints");

    double lo = best_theta - 2.0 * k_pi / n_steps;
    double hi = best_theta + 2.0 * k_pi / n_steps;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    double fa = score(a, &xt, &yt), fb = score(b, &xt, &yt);
    for (int it = 0; it < 90; ++it) {
        if (fa < fb) {
            hi = b; b = a; fb = fa;
            a = hi - gr * (hi - lo);
            fa = score(a, &xt, &yt);
        } else {
            lo = a; a = b; fa = fb;
            b = lo + gr * (hi - lo);
            fb = score(b, &xt, &yt);
        }
    }
    const double theta = 0.5 * (lo + hi);

    PoseSolution sol;
    sol.pose.theta_rad = theta;
    const double rss = score(theta, &sol.pose.x_t_m, &sol.pose.y_t_m);
    sol.residual_rms_m = std::sqrt(rss / scalar_rows);
    return sol;
}

/// Per-antenna outcome of a locate run.
struct AntennaPrediction {
    Vec2 antenna;
    bool on_screen = false;
    int line_label = -1;
    Vec2 predicted_screen;  ///< antenna position mapped through the solved pose
};

struct LocateReport {
    ScreenPose pose;
    double residual_rms_m = 0.0;
    std::vector<AntennaPrediction> predictions;
    int antennas_used = 0;
};

struct LocateOptions {
    double code_bit_duration_s = 100e-6;
    int code_length = 0;           ///< taken from the classifier when 0
    double line_pitch_m = 0.005;
    double screen_width_m = 0.0;   ///< needed to try the far-edge hypothesis
    double boundary_ratio = 0.3;
    double on_screen_ratio = 0.3;  ///< relative amplitude below this marks off-screen
    int min_on_screen = 4;
};

/// End-to-end localization: classify each antenna's line (one screen
/// dimension), anchor the other dimension at detected screen boundaries,
/// and solve the rigid transform. Boundary anchors are tried against both
/// screen edges; the hypothesis with the smallest residual wins.
inline LocateReport locate_screen(const std::vector<EmissionTrace>& traces,
                                  const LineClassifier& clf, const LocateOptions& opts) {
    if (traces.size() < 2) throw LocateFailure("need at least two antenna traces");
    const int code_length =
        opts.code_length > 0 ? opts.code_length : static_cast<int>(clf.dimension());

    std::vector<FeatureVector> features(traces.size());
    std::vector<double> amplitude(traces.size(), 0.0);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        try {
            const auto segs = segment_trace(traces[i], opts.code_bit_duration_s, code_length);
            features[i] = extract_features(traces[i], segs);
        } catch (const SegmentationFailure&) {
            features[i].antenna = traces[i].antenna;
            features[i].values.assign(code_length, 0.0);
        }
        amplitude[i] = features[i].mean_magnitude();
    }
    const double peak_amp = *std::max_element(amplitude.begin(), amplitude.end());
    if (!(peak_amp > 0.0)) throw LocateFailure("no antenna received any signal");

    LocateReport report;
    report.predictions.resize(traces.size());
    std::vector<PoseConstraint> line_constraints;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        auto& pred = report.predictions[i];
        pred.antenna = traces[i].antenna;
        pred.on_screen = amplitude[i] >= opts.on_screen_ratio * peak_amp;
        if (!pred.on_screen) continue;
        pred.line_label = clf.classify(features[i]);
        PoseConstraint pc;
        pc.antenna = traces[i].antenna;
        pc.dim = PoseConstraint::Dim::y;
        pc.target_y_m = (pred.line_label + 0.5) * opts.line_pitch_m;
        line_constraints.push_back(pc);
    }
    const int on_screen_count = static_cast<int>(line_constraints.size());
    report.antennas_used = on_screen_count;
    if (on_screen_count < opts.min_on_screen)
        throw LocateFailure("fewer than " + std::to_string(opts.min_on_screen) +
                            " antennas with on-screen signal");

    // Boundary anchors: an off-screen antenna ADJACENT to an on-screen one
    // brackets a screen edge; the anchor is the pair midpoint. Which edge it
    // sits on is unknown, so both hypotheses are scored. Adjacency is local:
    // the nearest on-screen antenna must be about as close as the antenna's
    // nearest neighbor of any kind, otherwise the pair spans more than one
    // array cell and carries no edge information.
    std::vector<Vec2> anchors;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        if (report.predictions[i].on_screen) continue;
        double d_on = std::numeric_limits<double>::infinity();
        double d_any = std::numeric_limits<double>::infinity();
        std::size_t best_j = traces.size();
        for (std::size_t j = 0; j < traces.size(); ++j) {
            if (j == i) continue;
            const double d = distance(traces[i].antenna, traces[j].antenna);
            d_any = std::fmin(d_any, d);
            if (report.predictions[j].on_screen && d < d_on) { d_on = d; best_j = j; }
        }
        if (best_j == traces.size() || d_on > 1.25 * d_any + 1e-12) continue;
        const double ratio = amplitude[i] / std::fmax(amplitude[best_j], 1e-300);
        if (ratio < opts.boundary_ratio)
            anchors.push_back({0.5 * (traces[i].antenna.x + traces[best_j].antenna.x),
                               0.5 * (traces[i].antenna.y + traces[best_j].antenna.y)});
    }
    if (anchors.empty())
        throw LocateFailure("no boundary anchor found; the cross dimension is unconstrained");
    if (anchors.size() > 4) anchors.resize(4);  // keep the hypothesis space small

    std::vector<double> edge_values{0.0};
    if (opts.screen_width_m > 0.0) edge_values.push_back(opts.screen_width_m);

    PoseSolution best;
    bool solved = false;
    const std::size_t combos =
        edge_values.size() > 1 ? (static_cast<std::size_t>(1) << anchors.size()) : 1;
    for (std::size_t mask = 0; mask < combos; ++mask) {
        std::vector<PoseConstraint> cs = line_constraints;
        for (std::size_t a = 0; a < anchors.size(); ++a) {
            PoseConstraint pc;
            pc.antenna = anchors[a];
            pc.dim = PoseConstraint::Dim::x;
            pc.target_x_m = edge_values[(mask >> a) & 1];
            cs.push_back(pc);
        }
        try {
            const PoseSolution sol = solve_pose(cs);
            if (!solved || sol.residual_rms_m < best.residual_rms_m) {
                best = sol;
                solved = true;
            }
        } catch (const PoseUnsolvable&) {
        }
    }
    if (!solved) throw LocateFailure("pose could not be solved from the gathered constraints");

    report.pose = best.pose;
    report.residual_rms_m = best.residual_rms_m;
    for (auto& pred : report.predictions)
        pred.predicted_screen = best.pose.to_screen(pred.antenna);
    return report;
}

}  // namespace iemisim
