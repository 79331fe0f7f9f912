#pragma once

// Deterministic synthetic population of writers producing digit-string pen
// traces: genuine samples, skilled forgeries (style blends), and enough
// variation (slant, shape warps, speed, pressure, hyphenation, session
// drift) to make the verification task non-trivial at desk scale.
//
// All randomness flows through SplitMix64 streams derived from explicit
// seeds, so a fixed seed reproduces the dataset byte for byte. Skilled
// forgeries follow a ring pairing: the forger of writer w is writer
// (w + 1) mod num_writers.

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pavenet/rng.hpp"
#include "pavenet/trace_io.hpp"

namespace pavenet {

struct ContentLengthError : std::runtime_error { using std::runtime_error::runtime_error; };

struct DigitTemplate {
    std::vector<std::vector<std::array<double, 2>>> strokes;  // control polylines in [0,1]^2
};

// Canonical digit shapes, hand-authored polyline control points (y up).
inline const std::array<DigitTemplate, 10>& digit_templates() {
    static const std::array<DigitTemplate, 10> kTemplates = {{
        /*0*/ {{{{0.50, 0.95}, {0.18, 0.75}, {0.15, 0.30}, {0.45, 0.02}, {0.80, 0.22}, {0.85, 0.70}, {0.52, 0.95}}}},
        /*1*/ {{{{0.28, 0.78}, {0.50, 0.98}, {0.50, 0.50}, {0.50, 0.02}}}},
        /*2*/ {{{{0.18, 0.80}, {0.38, 0.98}, {0.72, 0.92}, {0.78, 0.65}, {0.45, 0.35}, {0.15, 0.05}, {0.85, 0.05}}}},
        /*3*/ {{{{0.20, 0.90}, {0.55, 0.98}, {0.78, 0.78}, {0.48, 0.55}, {0.80, 0.32}, {0.52, 0.02}, {0.18, 0.12}}}},
        /*4*/ {{{{0.68, 0.98}, {0.15, 0.38}, {0.85, 0.38}}, {{0.62, 0.72}, {0.62, 0.02}}}},
        /*5*/ {{{{0.80, 0.95}, {0.28, 0.95}, {0.22, 0.60}, {0.58, 0.66}, {0.80, 0.40}, {0.62, 0.06}, {0.20, 0.12}}}},
        /*6*/ {{{{0.72, 0.92}, {0.35, 0.68}, {0.20, 0.32}, {0.42, 0.03}, {0.72, 0.20}, {0.68, 0.45}, {0.26, 0.40}}}},
        /*7*/ {{{{0.15, 0.95}, {0.85, 0.95}, {0.48, 0.40}, {0.36, 0.02}}}},
        /*8*/ {{{{0.50, 0.97}, {0.24, 0.80}, {0.58, 0.56}, {0.80, 0.28}, {0.48, 0.03}, {0.20, 0.26}, {0.44, 0.56}, {0.76, 0.80}, {0.50, 0.97}}}},
        /*9*/ {{{{0.76, 0.74}, {0.46, 0.95}, {0.22, 0.72}, {0.48, 0.50}, {0.76, 0.74}, {0.70, 0.30}, {0.54, 0.02}}}},
    }};
    return kTemplates;
}

struct WriterStyle {
    int writer_id = 0;
    uint64_t style_seed = 0;   // derived from (population seed, writer_id)

    double slant = 0.0;        // x shear per unit y
    double size_x = 1.0;
    double size_y = 1.0;
    double spacing = 1.1;      // advance width in digit-box units
    double speed = 1.0;        // higher -> sparser sampling
    double speed_wobble = 0.1;
    double corner_slow = 0.0;  // velocity dip toward stroke vertices (motor signature)
    double pressure_base = 0.5;
    double pressure_amp = 0.2;
    double pressure_rate = 0.35;  // pressure oscillation advance per sample
    double jitter = 0.01;      // per-point positional noise
    double hyphenation = 0.3;  // probability of joining adjacent digits

    // per digit, per control point (dx, dy) warp
    std::array<std::vector<std::array<double, 2>>, 10> shape_offsets;

    std::vector<double> parameter_vector() const {
        std::vector<double> v = {slant,         size_x,       size_y,        spacing,
                                 speed,         speed_wobble, corner_slow,   pressure_base,
                                 pressure_amp,  pressure_rate, jitter,       hyphenation};
        for (const auto& digit : shape_offsets)
            for (const auto& pt : digit) { v.push_back(pt[0]); v.push_back(pt[1]); }
        return v;
    }
};

inline int forger_of(int writer_id, int num_writers) {
    return (writer_id + 1) % num_writers;
}

inline WriterStyle make_style(uint64_t population_seed, int writer_id) {
    WriterStyle st;
    st.writer_id = writer_id;
    st.style_seed = mix_seed(population_seed, static_cast<uint64_t>(writer_id), 0xbeef);
    SplitMix64 g(st.style_seed);
    st.slant = g.uniform(-0.4, 0.4);
    st.size_x = g.uniform(0.8, 1.25);
    st.size_y = g.uniform(0.8, 1.25);
    st.spacing = g.uniform(1.05, 1.35);
    st.speed = g.uniform(0.7, 1.35);
    st.speed_wobble = g.uniform(0.05, 0.15);
    st.corner_slow = g.uniform(-0.7, 0.7);
    st.pressure_base = g.uniform(0.25, 0.8);
    st.pressure_amp = g.uniform(0.06, 0.36);
    st.pressure_rate = g.uniform(0.12, 0.7);
    st.jitter = g.uniform(0.004, 0.012);
    st.hyphenation = g.uniform(0.05, 0.6);
    const auto& templates = digit_templates();
    for (int d = 0; d < 10; ++d) {
        for (const auto& stroke : templates[static_cast<size_t>(d)].strokes) {
            for (size_t i = 0; i < stroke.size(); ++i) {
                st.shape_offsets[static_cast<size_t>(d)].push_back(
                    {g.normal(0.0, 0.06), g.normal(0.0, 0.06)});
            }
        }
    }
    return st;
}

inline std::vector<WriterStyle> gen_population(int num_writers, uint64_t seed) {
    if (num_writers < 1)
        throw std::invalid_argument("num_writers must be >= 1");
    std::vector<WriterStyle> styles;
    styles.reserve(static_cast<size_t>(num_writers));
    for (int w = 0; w < num_writers; ++w) styles.push_back(make_style(seed, w));
    return styles;
}

// Session 2 perturbs every style parameter by a fixed per-writer factor,
// modeling inter-session drift. Session 1 is the reference.
inline WriterStyle drift_style(const WriterStyle& style, int session, double drift) {
    if (session == 1 || drift == 0.0) return style;
    WriterStyle st = style;
    SplitMix64 g(mix_seed(style.style_seed, static_cast<uint64_t>(session), 0xd1f7));
    auto nudge = [&](double v) { return v * (1.0 + drift * g.uniform(-1.0, 1.0)); };
    st.slant = style.slant + drift * g.uniform(-1.0, 1.0);
    st.size_x = nudge(style.size_x);
    st.size_y = nudge(style.size_y);
    st.spacing = nudge(style.spacing);
    st.speed = nudge(style.speed);
    st.speed_wobble = nudge(style.speed_wobble);
    st.corner_slow = style.corner_slow + drift * g.uniform(-1.0, 1.0);
    st.pressure_base = nudge(style.pressure_base);
    st.pressure_amp = nudge(style.pressure_amp);
    st.pressure_rate = nudge(style.pressure_rate);
    st.jitter = nudge(style.jitter);
    st.hyphenation = std::clamp(nudge(style.hyphenation), 0.0, 1.0);
    for (auto& digit : st.shape_offsets)
        for (auto& pt : digit) {
            pt[0] += drift * 0.05 * g.uniform(-1.0, 1.0);
            pt[1] += drift * 0.05 * g.uniform(-1.0, 1.0);
        }
    return st;
}

// Convex parameter blend: beta = 0 reproduces the victim, beta = 1 the forger.
inline WriterStyle blend_styles(const WriterStyle& victim, const WriterStyle& forger,
                                double beta) {
    WriterStyle st = victim;
    auto mix = [beta](double a, double b) { return a * (1.0 - beta) + b * beta; };
    st.slant = mix(victim.slant, forger.slant);
    st.size_x = mix(victim.size_x, forger.size_x);
    st.size_y = mix(victim.size_y, forger.size_y);
    st.spacing = mix(victim.spacing, forger.spacing);
    st.speed = mix(victim.speed, forger.speed);
    st.speed_wobble = mix(victim.speed_wobble, forger.speed_wobble);
    st.corner_slow = mix(victim.corner_slow, forger.corner_slow);
    st.pressure_base = mix(victim.pressure_base, forger.pressure_base);
    st.pressure_amp = mix(victim.pressure_amp, forger.pressure_amp);
    st.pressure_rate = mix(victim.pressure_rate, forger.pressure_rate);
    st.jitter = mix(victim.jitter, forger.jitter);
    st.hyphenation = mix(victim.hyphenation, forger.hyphenation);
    for (int d = 0; d < 10; ++d)
        for (size_t i = 0; i < st.shape_offsets[static_cast<size_t>(d)].size(); ++i)
            for (int k = 0; k < 2; ++k)
                st.shape_offsets[static_cast<size_t>(d)][i][static_cast<size_t>(k)] =
                    mix(victim.shape_offsets[static_cast<size_t>(d)][i][static_cast<size_t>(k)],
                        forger.shape_offsets[static_cast<size_t>(d)][i][static_cast<size_t>(k)]);
    return st;
}

namespace detail {

struct PenBuilder {
    std::vector<PenSample> samples;
    double t_ms = 0.0;

    void add(double x, double y, double p, bool down, double dt) {
        t_ms += dt;
        samples.push_back({x, y, std::max(0.0, p), t_ms, down});
    }
};

// Emit samples along one stroke polyline. Point density follows arc length
// divided by the writer's speed; corner_slow warps positions toward or away
// from the segment vertices, shaping the velocity profile; pressure follows
// the writer's oscillation rate around their base value.
inline void sample_stroke(PenBuilder& pb, const std::vector<std::array<double, 2>>& pts,
                          const WriterStyle& st, SplitMix64& g, double& phase) {
    constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
    const double pts_per_unit = 2.2 / st.speed;
    for (size_t seg = 0; seg + 1 < pts.size(); ++seg) {
        const double x0 = pts[seg][0], y0 = pts[seg][1];
        const double x1 = pts[seg + 1][0], y1 = pts[seg + 1][1];
        const double len = std::hypot(x1 - x0, y1 - y0);
        const int steps = std::max(1, static_cast<int>(std::lround(len * pts_per_unit)));
        const int from = seg == 0 ? 0 : 1;  // avoid duplicating shared vertices
        for (int i = from; i <= steps; ++i) {
            const double u = static_cast<double>(i) / steps;
            // sample-position warp: du/dt = 1 + corner_slow * cos(2 pi u),
            // so pen speed dips (or peaks) near segment vertices
            const double uw = u + st.corner_slow * std::sin(kTwoPi * u) / kTwoPi;
            const double x = x0 + uw * (x1 - x0) + g.normal(0.0, st.jitter);
            const double y = y0 + uw * (y1 - y0) + g.normal(0.0, st.jitter);
            phase += st.pressure_rate;
            const double p =
                st.pressure_base + st.pressure_amp * std::sin(phase) + g.normal(0.0, 0.02);
            const double dt = 8.0 * (1.0 + st.speed_wobble * g.uniform(-1.0, 1.0));
            pb.add(x, y, p, true, dt);
        }
    }
}

}  // namespace detail

// Generates one genuine trace for the given style, content string and
// session. Deterministic in all arguments.
inline RawTrace gen_genuine(const WriterStyle& style, const std::string& content, int session,
                            uint64_t noise_seed, double drift = 0.05) {
    if (content.size() < 7 || content.size() > 11)
        throw ContentLengthError("content must be 7-11 digits, got " +
                                 std::to_string(content.size()));
    for (char c : content)
        if (c < '0' || c > '9')
            throw ContentLengthError("content must contain only digits");

    WriterStyle st = drift_style(style, session, drift);
    SplitMix64 g(mix_seed(noise_seed, 0x7ace, static_cast<uint64_t>(session)));
    // sample-to-sample fluctuation of the static layout; the dynamic
    // signatures (speed profile, pressure rhythm) stay writer-consistent
    st.slant += g.normal(0.0, 0.04);
    st.size_x *= 1.0 + g.normal(0.0, 0.05);
    st.size_y *= 1.0 + g.normal(0.0, 0.05);
    st.spacing *= 1.0 + g.normal(0.0, 0.04);
    st.speed *= 1.0 + g.normal(0.0, 0.02);
    st.pressure_base *= 1.0 + g.normal(0.0, 0.02);
    detail::PenBuilder pb;
    double phase = g.uniform(0.0, 6.28);
    double cursor = 0.0;
    const auto& templates = digit_templates();

    for (size_t ci = 0; ci < content.size(); ++ci) {
        const int digit = content[ci] - '0';
        const auto& tmpl = templates[static_cast<size_t>(digit)];
        const auto& offsets = style.shape_offsets[static_cast<size_t>(digit)];
        const bool join_prev = ci > 0 && g.next_double() < st.hyphenation;

        size_t pt_index = 0;
        for (size_t si = 0; si < tmpl.strokes.size(); ++si) {
            std::vector<std::array<double, 2>> pts;
            pts.reserve(tmpl.strokes[si].size());
            for (const auto& cp : tmpl.strokes[si]) {
                double x = cp[0] + offsets[pt_index][0];
                double y = cp[1] + offsets[pt_index][1];
                ++pt_index;
                x = x * st.size_x + st.slant * (y - 0.5);
                y = y * st.size_y;
                pts.push_back({cursor + x, y});
            }
            const bool connect = si == 0 ? join_prev : false;
            if (!pb.samples.empty() && !connect) {
                // pen lift: short airborne transition, zero pressure
                const auto& last = pb.samples.back();
                const double nx = pts[0][0], ny = pts[0][1];
                for (int k = 1; k <= 2; ++k) {
                    const double u = k / 3.0;
                    pb.add(last.x + u * (nx - last.x), last.y + u * (ny - last.y), 0.0, false,
                           10.0);
                }
            } else if (!pb.samples.empty() && connect) {
                // hyphenation: stay down and draw a ligature into the next digit
                const auto& last = pb.samples.back();
                const double nx = pts[0][0], ny = pts[0][1];
                const double u = 0.5;
                phase += 0.35;
                pb.add(last.x + u * (nx - last.x), last.y + u * (ny - last.y) + 0.03,
                       st.pressure_base + st.pressure_amp * std::sin(phase), true, 9.0);
            }
            detail::sample_stroke(pb, pts, st, g, phase);
        }
        cursor += st.spacing * st.size_x;
    }

    RawTrace trace;
    trace.samples = std::move(pb.samples);
    trace.writer_id = style.writer_id;
    trace.session = session;
    trace.label = Label::Genuine;
    trace.content = content;
    trace.validate();
    return trace;
}

// Skilled forgery: the forger reproduces the victim's content with a style
// blended toward their own hand by beta. Both styles receive their own
// session drift before blending, so beta = 0 and beta = 1 reduce exactly to
// the corresponding genuine generators.
inline RawTrace gen_skilled_forgery(const WriterStyle& victim, const WriterStyle& forger,
                                    const std::string& content, int session,
                                    uint64_t noise_seed, double beta = 0.35,
                                    double drift = 0.05) {
    const WriterStyle blended =
        blend_styles(drift_style(victim, session, drift), drift_style(forger, session, drift), beta);
    RawTrace trace = gen_genuine(blended, content, session, noise_seed, /*drift=*/0.0);
    trace.writer_id = victim.writer_id;
    trace.label = Label::SkilledForgery;
    return trace;
}

inline std::string random_content(SplitMix64& g, int min_len = 7, int max_len = 11) {
    const int len = g.uniform_int(min_len, max_len);
    std::string s(static_cast<size_t>(len), '0');
    for (char& c : s) c = static_cast<char>('0' + g.next_below(10));
    return s;
}

struct SynthConfig {
    int num_writers = 30;
    int per_session_count = 5;  // genuine (and skilled forgeries) per writer per session
    double beta = 0.35;
    double drift = 0.05;
    uint64_t seed = 7;
};

struct GeneratedDataset {
    DatasetManifest manifest;                          // paths relative to out_dir
    std::vector<std::pair<std::string, RawTrace>> traces;  // (relative path, trace)
};

// Builds the full population in memory. Genuine sample j of (writer, session)
// has content drawn from a per-(writer, session, j) stream; skilled forgery j
// copies that exact content, imitated by the ring forger.
inline GeneratedDataset generate_dataset(const SynthConfig& cfg) {
    const auto styles = gen_population(cfg.num_writers, cfg.seed);
    GeneratedDataset ds;
    ds.manifest.seed = cfg.seed;

    char name[64];
    for (int w = 0; w < cfg.num_writers; ++w) {
        for (int session = 1; session <= 2; ++session) {
            for (int j = 0; j < cfg.per_session_count; ++j) {
                SplitMix64 cg(mix_seed(cfg.seed, static_cast<uint64_t>(w),
                                       static_cast<uint64_t>(session), static_cast<uint64_t>(j)));
                const std::string content = random_content(cg);

                const uint64_t gen_seed = mix_seed(cfg.seed ^ 0x6e0a, static_cast<uint64_t>(w),
                                                   static_cast<uint64_t>(session),
                                                   static_cast<uint64_t>(j));
                RawTrace genuine = gen_genuine(styles[static_cast<size_t>(w)], content, session,
                                               gen_seed, cfg.drift);
                std::snprintf(name, sizeof(name), "traces/w%03d_s%d_g%02d.trc", w, session, j);
                ds.traces.emplace_back(name, std::move(genuine));
                ds.manifest.entries.push_back({name, w, session, Label::Genuine});

                const int f = forger_of(w, cfg.num_writers);
                const uint64_t forge_seed = mix_seed(cfg.seed ^ 0xf049e, static_cast<uint64_t>(w),
                                                     static_cast<uint64_t>(session),
                                                     static_cast<uint64_t>(j));
                RawTrace forged = gen_skilled_forgery(styles[static_cast<size_t>(w)],
                                                      styles[static_cast<size_t>(f)], content,
                                                      session, forge_seed, cfg.beta, cfg.drift);
                std::snprintf(name, sizeof(name), "traces/w%03d_s%d_f%02d.trc", w, session, j);
                ds.traces.emplace_back(name, std::move(forged));
                ds.manifest.entries.push_back({name, w, session, Label::SkilledForgery});
            }
        }
    }
    return ds;
}

// Writes traces plus manifest.txt; when train_writers > 0 also writes
// manifest_train.txt / manifest_test.txt split by writer id (open set).
inline void write_dataset(const GeneratedDataset& ds, const std::filesystem::path& out_dir,
                          int train_writers = 0) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "traces");
    for (const auto& [rel, trace] : ds.traces) save_trace(trace, out_dir / rel);
    DatasetManifest full = ds.manifest;
    full.base_dir = out_dir;
    save_manifest(full, out_dir / "manifest.txt");
    if (train_writers > 0) {
        DatasetManifest train, test;
        train.seed = test.seed = ds.manifest.seed;
        for (const ManifestEntry& e : ds.manifest.entries)
            (e.writer_id < train_writers ? train : test).entries.push_back(e);
        save_manifest(train, out_dir / "manifest_train.txt");
        save_manifest(test, out_dir / "manifest_test.txt");
    }
}

}  // namespace pavenet
