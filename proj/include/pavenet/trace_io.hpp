#pragma once

// Trace data model and on-disk dataset format.
//
// Trace file: UTF-8 text, header line "x y p t pen", then one sample per
// line as space-separated decimals with pen in {0,1}. Doubles are written
// with std::to_chars (shortest round-trip form), so save/load is lossless.
//
// Manifest file: one entry per line, "path writer_id session label" with
// label in {genuine, forgery}. Paths are relative to the manifest location.
// Lines starting with '#' are comments; the generator records its seed in a
// "# seed N" comment.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace pavenet {

struct ParseError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InvariantError : std::runtime_error { using std::runtime_error::runtime_error; };
struct MissingFileError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DuplicateEntryError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

enum class Label { Genuine, SkilledForgery };

inline const char* label_name(Label l) { return l == Label::Genuine ? "genuine" : "forgery"; }

struct PenSample {
    double x = 0.0;
    double y = 0.0;
    double p = 0.0;        // pressure, >= 0
    double t = 0.0;        // timestamp in ms, non-decreasing within a trace
    bool pen_down = true;
};

struct RawTrace {
    std::vector<PenSample> samples;
    int writer_id = 0;
    int session = 1;
    Label label = Label::Genuine;
    std::string content;   // digit string; informational, empty when unknown

    int length() const { return static_cast<int>(samples.size()); }

    // Throws InvariantError on violation of the type contract.
    void validate() const {
        if (samples.size() < 2)
            throw InvariantError("trace has fewer than 2 samples");
        bool any_down = false;
        for (size_t i = 0; i < samples.size(); ++i) {
            const PenSample& s = samples[i];
            if (!(s.p >= 0.0))
                throw InvariantError("negative pressure at sample " + std::to_string(i));
            if (i > 0 && s.t < samples[i - 1].t)
                throw InvariantError("timestamp decreases at sample " + std::to_string(i));
            any_down = any_down || s.pen_down;
        }
        if (!any_down)
            throw InvariantError("trace has no pen-down sample");
        if (session != 1 && session != 2)
            throw InvariantError("session must be 1 or 2");
    }
};

struct ManifestEntry {
    std::string path;   // relative to the manifest file
    int writer_id = 0;
    int session = 1;
    Label label = Label::Genuine;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;
    uint64_t seed = 0;

    // (writer, session, label) -> count
    std::map<std::tuple<int, int, Label>, int> counts() const {
        std::map<std::tuple<int, int, Label>, int> out;
        for (const ManifestEntry& e : entries) out[{e.writer_id, e.session, e.label}]++;
        return out;
    }

    std::vector<int> writer_ids() const {
        std::set<int> ids;
        for (const ManifestEntry& e : entries) ids.insert(e.writer_id);
        return {ids.begin(), ids.end()};
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& tok, const char* what, size_t line_no) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw ParseError(std::string("bad ") + what + " at line " + std::to_string(line_no) +
                         ": '" + tok + "'");
    return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream is(line);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

}  // namespace detail

inline RawTrace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingFileError("cannot open trace file: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("empty trace file: " + path.string());
    {
        auto toks = detail::split_ws(line);
        if (toks != std::vector<std::string>{"x", "y", "p", "t", "pen"})
            throw ParseError("bad trace header in " + path.string() + ": '" + line + "'");
    }
    RawTrace trace;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 5)
            throw ParseError("expected 5 fields at line " + std::to_string(line_no) + " of " +
                             path.string());
        PenSample s;
        s.x = detail::parse_double(toks[0], "x", line_no);
        s.y = detail::parse_double(toks[1], "y", line_no);
        s.p = detail::parse_double(toks[2], "p", line_no);
        s.t = detail::parse_double(toks[3], "t", line_no);
        if (toks[4] == "0")
            s.pen_down = false;
        else if (toks[4] == "1")
            s.pen_down = true;
        else
            throw ParseError("pen flag must be 0 or 1 at line " + std::to_string(line_no));
        trace.samples.push_back(s);
    }
    trace.validate();
    return trace;
}

inline void save_trace(const RawTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write trace file: " + path.string());
    out << "x y p t pen\n";
    for (const PenSample& s : trace.samples) {
        out << detail::format_double(s.x) << ' ' << detail::format_double(s.y) << ' '
            << detail::format_double(s.p) << ' ' << detail::format_double(s.t) << ' '
            << (s.pen_down ? '1' : '0') << '\n';
    }
    if (!out)
        throw IoError("write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingFileError("cannot open manifest: " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::set<std::string> seen_paths;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line[0] == '#') {
            auto toks = detail::split_ws(line.substr(1));
            if (toks.size() == 2 && toks[0] == "seed")
                m.seed = static_cast<uint64_t>(std::stoull(toks[1]));
            continue;
        }
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 4)
            throw ParseError("expected 4 fields at manifest line " + std::to_string(line_no));
        ManifestEntry e;
        e.path = toks[0];
        e.writer_id = static_cast<int>(detail::parse_double(toks[1], "writer_id", line_no));
        e.session = static_cast<int>(detail::parse_double(toks[2], "session", line_no));
        if (e.session != 1 && e.session != 2)
            throw ParseError("session must be 1 or 2 at manifest line " + std::to_string(line_no));
        if (toks[3] == "genuine")
            e.label = Label::Genuine;
        else if (toks[3] == "forgery")
            e.label = Label::SkilledForgery;
        else
            throw ParseError("label must be genuine|forgery at manifest line " +
                             std::to_string(line_no));
        if (!seen_paths.insert(e.path).second)
            throw DuplicateEntryError("duplicate manifest entry: " + e.path);
        if (!std::filesystem::exists(m.base_dir / e.path))
            throw MissingFileError("manifest references missing file: " +
                                   (m.base_dir / e.path).string());
        m.entries.push_back(std::move(e));
    }
    // writer ids must form a contiguous set
    auto ids = m.writer_ids();
    for (size_t i = 1; i < ids.size(); ++i)
        if (ids[i] != ids[i - 1] + 1)
            throw InvariantError("writer ids are not contiguous: gap after " +
                                 std::to_string(ids[i - 1]));
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write manifest: " + path.string());
    out << "# generator splitmix64\n";
    out << "# seed " << m.seed << '\n';
    for (const ManifestEntry& e : m.entries)
        out << e.path << ' ' << e.writer_id << ' ' << e.session << ' ' << label_name(e.label)
            << '\n';
    if (!out)
        throw IoError("write failed: " + path.string());
}

// Advisory check: every writer/session should pair each genuine sample with a
// skilled forgery. Returns one warning string per imbalance found.
inline std::vector<std::string> validate_pairing(const DatasetManifest& m) {
    std::map<std::pair<int, int>, std::pair<int, int>> tally;  // (writer, session) -> (gen, forg)
    for (const ManifestEntry& e : m.entries) {
        auto& t = tally[{e.writer_id, e.session}];
        (e.label == Label::Genuine ? t.first : t.second)++;
    }
    std::vector<std::string> warnings;
    for (const auto& [key, t] : tally) {
        if (t.first != t.second)
            warnings.push_back("writer " + std::to_string(key.first) + " session " +
                               std::to_string(key.second) + " has " + std::to_string(t.first) +
                               " genuine but " + std::to_string(t.second) + " skilled forgeries");
    }
    return warnings;
}

}  // namespace pavenet
