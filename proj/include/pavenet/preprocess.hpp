#pragma once

// Raw trace -> normalized 12-channel feature sequence.
//
// Pipeline order: center_scale -> normalize_pressure -> resample_double ->
// time_functions -> zscore. All steps are pure; preprocess_trace composes
// them. Derivatives are forward differences with the last value repeated so
// every channel keeps the sequence length.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "pavenet/trace_io.hpp"

namespace pavenet {

struct FeatureSequence {
    static constexpr int kChannels = 12;

    std::vector<double> data;  // kChannels x length, row-major
    int length = 0;
    int writer_id = 0;
    int session = 1;
    Label label = Label::Genuine;

    double& at(int c, int t) { return data[static_cast<size_t>(c) * length + t]; }
    double at(int c, int t) const { return data[static_cast<size_t>(c) * length + t]; }
    double* channel(int c) { return data.data() + static_cast<size_t>(c) * length; }
    const double* channel(int c) const { return data.data() + static_cast<size_t>(c) * length; }
};

// Channel order, matching the time-function table.
inline const char* const kFeatureNames[FeatureSequence::kChannels] = {
    "dx", "dy", "v", "theta", "cos_theta", "sin_theta",
    "dv", "dtheta", "log_curv_radius", "centripetal_acc", "total_acc", "pressure"};

// Shift the bounding-box center of (x, y) to the origin and scale both axes
// by the larger half-extent, so max(|x|, |y|) == 1 and the aspect ratio is
// unchanged. A zero-extent trace is centered only.
inline RawTrace center_scale(RawTrace trace) {
    double xmin = trace.samples[0].x, xmax = xmin;
    double ymin = trace.samples[0].y, ymax = ymin;
    for (const PenSample& s : trace.samples) {
        xmin = std::min(xmin, s.x); xmax = std::max(xmax, s.x);
        ymin = std::min(ymin, s.y); ymax = std::max(ymax, s.y);
    }
    const double cx = 0.5 * (xmin + xmax);
    const double cy = 0.5 * (ymin + ymax);
    const double half = std::max(0.5 * (xmax - xmin), 0.5 * (ymax - ymin));
    const double scale = half > 0.0 ? 1.0 / half : 1.0;
    for (PenSample& s : trace.samples) {
        s.x = (s.x - cx) * scale;
        s.y = (s.y - cy) * scale;
    }
    return trace;
}

// Min-max normalization of pressure to [0, 1]; a constant pressure channel
// maps to all zeros.
inline RawTrace normalize_pressure(RawTrace trace) {
    double pmin = trace.samples[0].p, pmax = pmin;
    for (const PenSample& s : trace.samples) {
        pmin = std::min(pmin, s.p);
        pmax = std::max(pmax, s.p);
    }
    const double range = pmax - pmin;
    for (PenSample& s : trace.samples)
        s.p = range > 0.0 ? (s.p - pmin) / range : 0.0;
    return trace;
}

namespace detail {

// Piecewise cubic (4-point Lagrange) interpolation of a uniformly indexed
// series, evaluated at `pos` in [0, n-1]. Exact for polynomial data up to
// degree 3; falls back to the full Lagrange polynomial for n < 4.
inline double cubic_interp(const std::vector<double>& vals, double pos) {
    const int n = static_cast<int>(vals.size());
    if (n == 1) return vals[0];
    int base, count;
    if (n < 4) {
        base = 0;
        count = n;
    } else {
        int cell = std::clamp(static_cast<int>(std::floor(pos)), 0, n - 2);
        base = std::clamp(cell - 1, 0, n - 4);
        count = 4;
    }
    double acc = 0.0;
    for (int m = 0; m < count; ++m) {
        double w = 1.0;
        for (int l = 0; l < count; ++l) {
            if (l == m) continue;
            w *= (pos - (base + l)) / static_cast<double>(m - l);
        }
        acc += w * vals[static_cast<size_t>(base + m)];
    }
    return acc;
}

}  // namespace detail

// Doubles the number of samples by cubic interpolation against the sample
// index. x, y, p are cubic-interpolated (p clamped at 0 to keep the pressure
// invariant), timestamps linearly interpolated, pen state taken from the
// nearest original sample. Endpoints are reproduced exactly.
inline RawTrace resample_double(RawTrace trace) {
    const int n = trace.length();
    const int out_n = 2 * n;
    std::vector<double> xs(n), ys(n), ps(n);
    for (int i = 0; i < n; ++i) {
        xs[i] = trace.samples[i].x;
        ys[i] = trace.samples[i].y;
        ps[i] = trace.samples[i].p;
    }
    std::vector<PenSample> out(static_cast<size_t>(out_n));
    for (int j = 0; j < out_n; ++j) {
        const double pos = static_cast<double>(j) * (n - 1) / (out_n - 1);
        PenSample s;
        s.x = detail::cubic_interp(xs, pos);
        s.y = detail::cubic_interp(ys, pos);
        s.p = std::max(0.0, detail::cubic_interp(ps, pos));
        const int lo = std::clamp(static_cast<int>(std::floor(pos)), 0, n - 2);
        const double u = pos - lo;
        s.t = trace.samples[lo].t + u * (trace.samples[lo + 1].t - trace.samples[lo].t);
        s.pen_down = trace.samples[static_cast<size_t>(std::lround(pos))].pen_down;
        out[static_cast<size_t>(j)] = s;
    }
    trace.samples = std::move(out);
    return trace;
}

// Builds the 12 time-function channels from a centered, pressure-normalized,
// resampled trace. theta uses the two-argument arctangent; the log curvature
// radius clamps v and |dtheta| below by 1e-6 and takes the log of the
// absolute ratio, since the ratio is undefined at zero.
inline FeatureSequence time_functions(const RawTrace& trace) {
    constexpr double kEps = 1e-6;
    const int L = trace.length();
    FeatureSequence fs;
    fs.length = L;
    fs.writer_id = trace.writer_id;
    fs.session = trace.session;
    fs.label = trace.label;
    fs.data.assign(static_cast<size_t>(FeatureSequence::kChannels) * L, 0.0);

    auto forward_diff = [L](auto value_at, double* out) {
        for (int i = 0; i + 1 < L; ++i) out[i] = value_at(i + 1) - value_at(i);
        out[L - 1] = L >= 2 ? out[L - 2] : 0.0;
    };

    double* dx = fs.channel(0);
    double* dy = fs.channel(1);
    forward_diff([&](int i) { return trace.samples[static_cast<size_t>(i)].x; }, dx);
    forward_diff([&](int i) { return trace.samples[static_cast<size_t>(i)].y; }, dy);

    double* v = fs.channel(2);
    double* theta = fs.channel(3);
    double* cos_t = fs.channel(4);
    double* sin_t = fs.channel(5);
    for (int i = 0; i < L; ++i) {
        v[i] = std::hypot(dx[i], dy[i]);
        theta[i] = std::atan2(dy[i], dx[i]);
        cos_t[i] = std::cos(theta[i]);
        sin_t[i] = std::sin(theta[i]);
    }

    double* dv = fs.channel(6);
    double* dtheta = fs.channel(7);
    forward_diff([&](int i) { return v[i]; }, dv);
    forward_diff([&](int i) { return theta[i]; }, dtheta);

    double* rho = fs.channel(8);
    double* dv_c = fs.channel(9);
    double* acc = fs.channel(10);
    double* p = fs.channel(11);
    for (int i = 0; i < L; ++i) {
        rho[i] = std::log(std::max(v[i], kEps) / std::max(std::abs(dtheta[i]), kEps));
        dv_c[i] = v[i] * dtheta[i];
        acc[i] = std::hypot(dv[i], dv_c[i]);
        p[i] = trace.samples[static_cast<size_t>(i)].p;
    }
    return fs;
}

// Per-channel z-score with population statistics; constant channels map to
// all zeros.
inline FeatureSequence zscore(FeatureSequence fs) {
    const int L = fs.length;
    for (int c = 0; c < FeatureSequence::kChannels; ++c) {
        double* ch = fs.channel(c);
        double mean = 0.0;
        for (int i = 0; i < L; ++i) mean += ch[i];
        mean /= L;
        double var = 0.0;
        for (int i = 0; i < L; ++i) var += (ch[i] - mean) * (ch[i] - mean);
        var /= L;
        const double sd = std::sqrt(var);
        if (sd < 1e-12) {
            for (int i = 0; i < L; ++i) ch[i] = 0.0;
        } else {
            for (int i = 0; i < L; ++i) ch[i] = (ch[i] - mean) / sd;
        }
    }
    return fs;
}

inline FeatureSequence preprocess_trace(const RawTrace& trace) {
    return zscore(time_functions(resample_double(normalize_pressure(center_scale(trace)))));
}

// Debug dump: one row per time step, 12 comma-separated columns.
inline void write_feature_csv(const FeatureSequence& fs, std::ostream& out) {
    for (int c = 0; c < FeatureSequence::kChannels; ++c)
        out << kFeatureNames[c] << (c + 1 < FeatureSequence::kChannels ? ',' : '\n');
    for (int t = 0; t < fs.length; ++t)
        for (int c = 0; c < FeatureSequence::kChannels; ++c)
            out << detail::format_double(fs.at(c, t))
                << (c + 1 < FeatureSequence::kChannels ? ',' : '\n');
}

}  // namespace pavenet
